#include "ttalab/nn/checkpoint.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace ttalab {

namespace {

constexpr std::string_view kMagic = "ttalab-checkpoint";
constexpr int kVersion = 1;

void put_array(std::string& out, std::size_t layer, const char* name, const Tensor& t) {
  out += std::to_string(layer);
  out += ' ';
  out += name;
  out += ' ';
  out += std::to_string(t.size());
  char buf[40];
  for (double v : t.values()) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out += buf;
  }
  out += '\n';
}

struct LayerHeader {
  std::string kind;
  std::size_t a = 0, b = 0;
  double eps = 0.0;
};

double parse_double(const std::string& tok, std::size_t layer) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || errno == ERANGE) {
    throw ParseError("checkpoint layer " + std::to_string(layer) + ": bad number '" + tok + "'");
  }
  return v;
}

}  // namespace

std::string save_checkpoint(const Network& net) {
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  out += "layers " + std::to_string(net.layers().size()) + "\n";
  char buf[64];
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    out += "layer " + std::to_string(l) + " ";
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      out += "linear " + std::to_string(lin->in()) + " " + std::to_string(lin->out());
    } else if (const auto* relu = std::get_if<ReluLayer>(&layer)) {
      out += "relu " + std::to_string(relu->width);
    } else {
      const auto& bn = std::get<BatchNormLayer>(layer);
      std::snprintf(buf, sizeof buf, " %.17g", bn.eps);
      out += "batchnorm " + std::to_string(bn.channels()) + buf;
    }
    out += '\n';
  }
  out += "params\n";
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      put_array(out, l, "weight", lin->weight);
      put_array(out, l, "bias", lin->bias);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      put_array(out, l, "gamma", bn->gamma);
      put_array(out, l, "beta", bn->beta);
      put_array(out, l, "mu_s", bn->mu_s);
      put_array(out, l, "sigma2_s", bn->sigma2_s);
    }
  }
  out += "end\n";
  return out;
}

Network load_checkpoint(std::string_view document) {
  std::istringstream in{std::string(document)};
  std::string line;
  auto next_line = [&](const std::string& what) {
    if (!std::getline(in, line)) throw ParseError("checkpoint truncated: expected " + what);
    return std::istringstream(line);
  };

  {
    auto ls = next_line("header");
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kMagic) {
      throw ParseError("checkpoint: missing '" + std::string(kMagic) + "' header");
    }
    if (version != kVersion) {
      throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    }
  }
  std::size_t n_layers = 0;
  {
    auto ls = next_line("layer count");
    std::string key;
    if (!(ls >> key >> n_layers) || key != "layers" || n_layers == 0) {
      throw ParseError("checkpoint: bad 'layers' line");
    }
  }
  std::vector<LayerHeader> headers(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto ls = next_line("manifest entry for layer " + std::to_string(l));
    std::string key;
    std::size_t idx = 0;
    auto& h = headers[l];
    if (!(ls >> key >> idx >> h.kind) || key != "layer" || idx != l) {
      throw ParseError("checkpoint: bad manifest entry for layer " + std::to_string(l));
    }
    bool ok = false;
    if (h.kind == "linear") {
      ok = static_cast<bool>(ls >> h.a >> h.b);
    } else if (h.kind == "relu") {
      ok = static_cast<bool>(ls >> h.a);
    } else if (h.kind == "batchnorm") {
      std::string eps;
      ok = static_cast<bool>(ls >> h.a >> eps);
      if (ok) h.eps = parse_double(eps, l);
    } else {
      throw ParseError("checkpoint layer " + std::to_string(l) + ": unknown kind '" + h.kind +
                       "'");
    }
    if (!ok) throw ParseError("checkpoint layer " + std::to_string(l) + ": bad dimensions");
  }
  {
    auto ls = next_line("'params' marker");
    std::string key;
    if (!(ls >> key) || key != "params") throw ParseError("checkpoint: missing 'params' marker");
  }

  auto read_array = [&](std::size_t l, const char* name, std::size_t expected) {
    if (!std::getline(in, line)) {
      throw ParseError("checkpoint truncated: missing '" + std::string(name) + "' for layer " +
                       std::to_string(l) + " (" + headers[l].kind + ")");
    }
    std::istringstream ls(line);
    std::size_t idx = 0, count = 0;
    std::string got;
    if (!(ls >> idx >> got >> count) || idx != l || got != name) {
      throw ParseError("checkpoint layer " + std::to_string(l) + ": expected '" + name +
                       "' array");
    }
    if (count != expected) {
      throw ParseError("checkpoint layer " + std::to_string(l) + ": '" + name + "' has " +
                       std::to_string(count) + " values, manifest implies " +
                       std::to_string(expected));
    }
    std::vector<double> values(count);
    std::string tok;
    for (std::size_t k = 0; k < count; ++k) {
      if (!(ls >> tok)) {
        throw ParseError("checkpoint layer " + std::to_string(l) + ": '" + name +
                         "' truncated at value " + std::to_string(k));
      }
      values[k] = parse_double(tok, l);
    }
    return values;
  };

  std::vector<Layer> layers;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& h = headers[l];
    if (h.kind == "linear") {
      LinearLayer lin;
      lin.weight = Tensor({h.a, h.b}, read_array(l, "weight", h.a * h.b));
      lin.bias = Tensor({h.b}, read_array(l, "bias", h.b));
      layers.emplace_back(std::move(lin));
    } else if (h.kind == "relu") {
      layers.emplace_back(ReluLayer{h.a});
    } else {
      BatchNormLayer bn;
      bn.gamma = Tensor({h.a}, read_array(l, "gamma", h.a));
      bn.beta = Tensor({h.a}, read_array(l, "beta", h.a));
      bn.mu_s = Tensor({h.a}, read_array(l, "mu_s", h.a));
      bn.sigma2_s = Tensor({h.a}, read_array(l, "sigma2_s", h.a));
      bn.eps = h.eps;
      layers.emplace_back(std::move(bn));
    }
  }
  if (!std::getline(in, line) || line != "end") {
    throw ParseError("checkpoint: missing 'end' marker after layer " +
                     std::to_string(n_layers - 1));
  }
  try {
    return Network(std::move(layers));
  } catch (const Error& e) {
    throw ParseError(std::string("checkpoint describes an invalid network: ") + e.what());
  }
}

void write_checkpoint_file(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path.string());
  out << save_checkpoint(net);
}

Network read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_checkpoint(ss.str());
}

}  // namespace ttalab
