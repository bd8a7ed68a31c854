#include "amortlab/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "amortlab/error.hpp"
#include "amortlab/io.hpp"

namespace amortlab::nn {

namespace {

constexpr char kMagic[8] = {'A', 'M', 'L', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

}  // namespace

void Checkpoint::add_tensor(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                            const double* row_major, int code) {
  require(name.find_first_of(" \n") == std::string::npos, "tensor names may not contain spaces");
  require(!has(name), "duplicate tensor '" + name + "'");
  tensors_.push_back({name, rows, cols, code, values_.size()});
  values_.insert(values_.end(), row_major, row_major + rows * cols);
}

void Checkpoint::add_vector(const std::string& name, const Eigen::VectorXd& v) {
  add_tensor(name, v.size(), 1, v.data());
}

void Checkpoint::add_mlp(const std::string& prefix, const Mlp& mlp) {
  const auto& layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".L" + std::to_string(l);
    add_tensor(base + ".W", layers[l].out_width(), layers[l].in_width(), layers[l].weights.data(),
               static_cast<int>(layers[l].activation));
    add_vector(base + ".b", layers[l].bias);
  }
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const TensorEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw ValidationError("checkpoint has no tensor '" + name + "'");
}

RowMatrix Checkpoint::tensor(const std::string& name) const {
  const auto& e = entry(name);
  RowMatrix m(e.rows, e.cols);
  std::copy(values_.begin() + static_cast<std::ptrdiff_t>(e.offset),
            values_.begin() + static_cast<std::ptrdiff_t>(e.offset + static_cast<std::size_t>(e.rows * e.cols)),
            m.data());
  return m;
}

Eigen::VectorXd Checkpoint::vector(const std::string& name) const {
  RowMatrix m = tensor(name);
  return Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
}

Mlp Checkpoint::mlp(const std::string& prefix) const {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0;; ++l) {
    const std::string base = prefix + ".L" + std::to_string(l);
    if (!has(base + ".W")) break;
    DenseLayer layer;
    layer.weights = tensor(base + ".W");
    layer.bias = vector(base + ".b");
    const int code = entry(base + ".W").code;
    require(code >= 0 && code <= 2, "bad activation code in checkpoint");
    layer.activation = static_cast<Activation>(code);
    layers.push_back(std::move(layer));
  }
  require(!layers.empty(), "checkpoint has no MLP '" + prefix + "'");
  return Mlp(std::move(layers));
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ostringstream header;
  header << "kind " << kind << '\n';
  for (const auto& [k, v] : meta) header << "meta " << k << ' ' << v << '\n';
  for (const auto& t : tensors_)
    header << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << ' ' << t.code << '\n';
  const std::string text = header.str();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(values_.data()),
            static_cast<std::streamsize>(values_.size() * sizeof(double)));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 8) == 0,
          "not a checkpoint file: " + path.string());
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  require(16 + len <= bytes.size(), "truncated checkpoint header");
  std::istringstream header(bytes.substr(16, len));
  Checkpoint ck;
  std::size_t total = 0;
  std::string line;
  while (std::getline(header, line)) {
    std::istringstream rec(line);
    std::string tag;
    rec >> tag;
    if (tag == "kind") {
      rec >> ck.kind;
    } else if (tag == "meta") {
      std::string k, v;
      rec >> k;
      std::getline(rec >> std::ws, v);
      ck.meta[k] = v;
    } else if (tag == "tensor") {
      TensorEntry e;
      rec >> e.name >> e.rows >> e.cols >> e.code;
      e.offset = total;
      total += static_cast<std::size_t>(e.rows * e.cols);
      ck.tensors_.push_back(e);
    } else if (!tag.empty()) {
      throw ValidationError("unknown checkpoint header record '" + tag + "'");
    }
  }
  require(bytes.size() == 16 + len + total * sizeof(double), "checkpoint payload size mismatch");
  ck.values_.resize(total);
  std::memcpy(ck.values_.data(), bytes.data() + 16 + len, total * sizeof(double));
  return ck;
}

}  // namespace amortlab::nn
