#include "empathia/optimizer.hpp"

#include "empathia/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace empathia {

double AdamW::current_learning_rate() const {
  if (options_.warmup_steps <= 0) return options_.learning_rate;
  const double ramp = static_cast<double>(steps_ + 1) / static_cast<double>(options_.warmup_steps);
  return options_.learning_rate * std::min(1.0, ramp);
}

void AdamW::step(ad::ParameterSet& params) {
  const double lr = current_learning_rate();
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params.items()) {
    auto& m = first_[name];
    auto& v = second_[name];
    if (m.size() == 0) {
      m.setZero(p.value.rows(), p.value.cols());
      v.setZero(p.value.rows(), p.value.cols());
    }
    m = options_.beta1 * m + (1.0 - options_.beta1) * p.grad;
    v = options_.beta2 * v + (1.0 - options_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value *= 1.0 - lr * options_.weight_decay;
    p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + options_.epsilon);
  }
}

void AdamW::save(const std::filesystem::path& file) const {
  TensorMap tensors;
  for (const auto& [name, m] : first_) tensors.emplace("m/" + name, m);
  for (const auto& [name, v] : second_) tensors.emplace("v/" + name, v);
  save_tensors(tensors, file);
}

void AdamW::load(const std::filesystem::path& file, std::uint64_t step_count) {
  first_.clear();
  second_.clear();
  for (auto& [key, value] : load_tensors(file)) {
    if (key.starts_with("m/")) {
      first_.emplace(key.substr(2), std::move(value));
    } else if (key.starts_with("v/")) {
      second_.emplace(key.substr(2), std::move(value));
    } else {
      throw FormatError("unexpected tensor '" + key + "' in optimizer state " + file.string());
    }
  }
  steps_ = step_count;
}

double clip_grad_norm(ad::ParameterSet& params, double max_norm) {
  const double norm = params.grad_norm();
  if (max_norm > 0.0 && norm > max_norm) params.scale_grad(max_norm / (norm + 1e-12));
  return norm;
}

namespace {

constexpr char kMagic[4] = {'E', 'M', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& file) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated tensor file " + file.string());
  return v;
}

}  // namespace

void save_tensors(const TensorMap& tensors, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, tensors.size());
  for (const auto& [name, m] : tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw IoError("write failed for " + file.string());
}

TensorMap load_tensors(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  char magic[4];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(file.string() + " is not a tensor file");
  }
  if (read_pod<std::uint32_t>(in, file) != kVersion) throw FormatError("unsupported tensor file version in " + file.string());
  const auto count = read_pod<std::uint64_t>(in, file);
  TensorMap tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(in, file);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated tensor file " + file.string());
    const auto rows = read_pod<std::uint64_t>(in, file);
    const auto cols = read_pod<std::uint64_t>(in, file);
    ad::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw FormatError("truncated tensor file " + file.string());
    }
    tensors.emplace(std::move(name), std::move(m));
  }
  return tensors;
}

void save_parameters(const ad::ParameterSet& params, const std::filesystem::path& file) {
  TensorMap tensors;
  for (const auto& [name, p] : params.items()) tensors.emplace(name, p.value);
  save_tensors(tensors, file);
}

void load_parameters(ad::ParameterSet& params, const std::filesystem::path& file) {
  auto tensors = load_tensors(file);
  for (auto& [name, p] : params.items()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("parameter '" + name + "' missing from " + file.string());
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw FormatError("parameter '" + name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                        std::to_string(it->second.cols()) + " in " + file.string() + ", expected " +
                        std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    p.value = std::move(it->second);
  }
}

}  // namespace empathia
