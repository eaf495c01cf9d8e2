#include "sprnn/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sprnn {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must be >= 0");
  if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train config: clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw std::invalid_argument("train config: invalid Adam hyperparameters");
  }
}

void adam_step(ParameterStore& params, AdamState& state, double lr, double beta1, double beta2, double eps) {
  for (auto& [name, tensor] : params) {
    if (!tensor.has_grad()) throw TrainingError("adam_step: missing gradient for parameter " + name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(beta1, t);
  const double correction2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, tensor] : params) {
    auto values = tensor.mutable_data();
    const auto grad = tensor.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != values.size()) m.assign(values.size(), 0.0);
    if (v.size() != values.size()) v.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  double total = 0.0;
  for (const auto& [_, tensor] : params) {
    if (!tensor.has_grad()) continue;
    for (double g : tensor.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, tensor] : params) {
      if (!tensor.has_grad()) continue;
      for (double& g : tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

double kl_weight_for_epoch(const TrainConfig& config, std::size_t epoch) {
  if (config.kl_warmup_epochs == 0) return config.weights.kl_weight;
  const double ramp = std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(config.kl_warmup_epochs));
  return config.weights.kl_weight * ramp;
}

namespace {

// Weighted running mean of loss breakdowns.
struct BreakdownMean {
  LossBreakdown sum;
  double weight = 0.0;

  void add(const LossBreakdown& b) {
    const double w = static_cast<double>(b.cvae_pairs);
    sum.nll += w * b.nll;
    sum.kl += w * b.kl;
    sum.pattern_mse += w * b.pattern_mse;
    sum.total += w * b.total;
    sum.cvae_pairs += b.cvae_pairs;
    sum.pattern_elements += b.pattern_elements;
    weight += w;
  }

  LossBreakdown result() const {
    LossBreakdown out = sum;
    if (weight > 0) {
      out.nll /= weight;
      out.kl /= weight;
      out.pattern_mse /= weight;
      out.total /= weight;
    }
    return out;
  }
};

std::vector<std::vector<const Sample*>> batches_of(std::span<const Sample> samples, std::size_t batch_size,
                                                   const std::vector<std::size_t>& order) {
  std::vector<std::vector<const Sample*>> out;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    std::vector<const Sample*> batch;
    for (std::size_t k = begin; k < std::min(order.size(), begin + batch_size); ++k) batch.push_back(&samples[order[k]]);
    out.push_back(std::move(batch));
  }
  return out;
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream out;
  out << "nll=" << b.nll << " kl=" << b.kl << " pattern_mse=" << b.pattern_mse << " total=" << b.total;
  return out.str();
}

}  // namespace

LossBreakdown train_epoch(SocialPatteRNN& model, std::span<const Sample> samples, const TrainConfig& config,
                          AdamState& state, std::size_t epoch) {
  config.validate();
  if (samples.empty()) throw TrainingError("train_epoch: no training samples");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(config.seed, epoch, 0x5u));
  std::shuffle(order.begin(), order.end(), shuffle.engine());
  NoiseStreams noise = NoiseStreams::sequential(derive_seed(config.seed, epoch, 0x2u));

  LossWeights weights = config.weights;
  weights.kl_weight = kl_weight_for_epoch(config, epoch);
  BreakdownMean mean;
  auto batches = batches_of(samples, config.batch_size, order);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Batch batch = make_batch(batches[b]);
    model.params().zero_grad();
    TrainPass pass = model.forward_train(batch, noise, weights);
    if (!std::isfinite(pass.breakdown.total) || !std::isfinite(pass.breakdown.nll) ||
        !std::isfinite(pass.breakdown.kl) || !std::isfinite(pass.breakdown.pattern_mse)) {
      throw TrainingError("non-finite loss in epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) +
                          ": " + describe(pass.breakdown));
    }
    backward(pass.loss);
    clip_grad_norm(model.params(), config.clip_norm);
    adam_step(model.params(), state, config.lr, config.beta1, config.beta2, config.adam_eps);
    mean.add(pass.breakdown);
  }
  return mean.result();
}

LossBreakdown evaluate_loss(const SocialPatteRNN& model, std::span<const Sample> samples, const TrainConfig& config) {
  NoGradGuard no_grad;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  NoiseStreams noise = NoiseStreams::sequential(derive_seed(config.seed, 0xe7a1u));
  BreakdownMean mean;
  for (const auto& chunk : batches_of(samples, config.batch_size, order)) {
    const Batch batch = make_batch(chunk);
    mean.add(model.forward_train(batch, noise, config.weights).breakdown);
  }
  return mean.result();
}

EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience) {
  EarlyStopDecision decision;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i] < decision.best) {
      decision.best = history[i];
      decision.best_epoch = i;
    }
  }
  decision.stop = !history.empty() && history.size() - 1 - decision.best_epoch >= patience;
  return decision;
}

FitResult fit(SocialPatteRNN& model, std::span<const Sample> train, std::span<const Sample> val,
              const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  FitResult result;
  std::vector<double> history;
  std::map<std::string, std::vector<double>> best_params;
  auto snapshot = [&] {
    for (const auto& [name, t] : model.params()) best_params[name].assign(t.data().begin(), t.data().end());
  };
  snapshot();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    log.kl_weight = kl_weight_for_epoch(config, epoch);
    log.train = train_epoch(model, train, config, result.adam, epoch);
    double metric = log.train.total;
    if (!val.empty()) {
      log.val = evaluate_loss(model, val, config);
      log.has_val = true;
      metric = log.val.total;
    }
    if (!std::isfinite(metric)) throw TrainingError("non-finite validation loss in epoch " + std::to_string(epoch + 1));
    history.push_back(metric);
    const auto decision = early_stop(history, config.patience);
    if (decision.best_epoch == epoch) snapshot();
    result.best_epoch = decision.best_epoch + 1;
    result.best_metric = decision.best;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (decision.stop) {
      result.early_stopped = true;
      break;
    }
  }
  for (auto& [name, t] : model.params()) {
    const auto& saved = best_params.at(name);
    std::copy(saved.begin(), saved.end(), t.mutable_data().begin());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint file format (little-endian):
//   magic[8] "SPRNNCKP", u32 format_version,
//   u64 config length, config bytes (UTF-8),
//   u64 epoch, f64 best_metric, u64 adam_step, u64 record count,
//   records: u32 name length, name bytes, u32 rank, rank x u64 dims, numel x f64.
// Record names are prefixed "param/", "adam_m/" or "adam_v/".

namespace {

class Writer {
 public:
  template <class T>
  void put(T value) {
    if constexpr (std::endian::native == std::endian::big) {
      unsigned char bytes[sizeof(T)];
      std::memcpy(bytes, &value, sizeof(T));
      std::reverse(bytes, bytes + sizeof(T));
      buffer_.append(reinterpret_cast<const char*>(bytes), sizeof(T));
    } else {
      buffer_.append(reinterpret_cast<const char*>(&value), sizeof(T));
    }
  }
  void bytes(const std::string& s) { buffer_.append(s); }
  const std::string& str() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    T value;
    std::memcpy(&value, raw, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

void put_record(Writer& w, const std::string& name, const StoredTensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) w.put<std::uint64_t>(d);
  for (double v : t.values) w.put<double>(v);
}

StoredTensor stored(std::span<const double> values, const Shape& shape) {
  return {shape, std::vector<double>(values.begin(), values.end())};
}

}  // namespace

Checkpoint make_checkpoint(const SocialPatteRNN& model, const AdamState* adam, std::string config_text,
                           std::uint64_t epoch, double best_metric) {
  Checkpoint ck;
  ck.config_text = std::move(config_text);
  ck.epoch = epoch;
  ck.best_metric = best_metric;
  for (const auto& [name, t] : model.params()) ck.params[name] = stored(t.data(), t.shape());
  if (adam) {
    ck.adam_step = adam->step;
    for (const auto& [name, m] : adam->m) ck.adam_m[name] = stored(m, Shape{m.size()});
    for (const auto& [name, v] : adam->v) ck.adam_v[name] = stored(v, Shape{v.size()});
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.bytes(std::string(kCheckpointMagic, sizeof kCheckpointMagic));
  w.put<std::uint32_t>(ck.format_version);
  w.put<std::uint64_t>(ck.config_text.size());
  w.bytes(ck.config_text);
  w.put<std::uint64_t>(ck.epoch);
  w.put<double>(ck.best_metric);
  w.put<std::uint64_t>(ck.adam_step);
  w.put<std::uint64_t>(ck.params.size() + ck.adam_m.size() + ck.adam_v.size());
  for (const auto& [name, t] : ck.params) put_record(w, "param/" + name, t);
  for (const auto& [name, t] : ck.adam_m) put_record(w, "adam_m/" + name, t);
  for (const auto& [name, t] : ck.adam_v) put_record(w, "adam_v/" + name, t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  Reader r(buffer.str());

  if (r.bytes(sizeof kCheckpointMagic, "magic") != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw CheckpointError("not a checkpoint file (bad magic): " + path.string());
  }
  Checkpoint ck;
  ck.format_version = r.get<std::uint32_t>("format version");
  if (ck.format_version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(ck.format_version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto config_len = r.get<std::uint64_t>("config length");
  ck.config_text = r.bytes(config_len, "config text");
  ck.epoch = r.get<std::uint64_t>("epoch");
  ck.best_metric = r.get<double>("best metric");
  ck.adam_step = r.get<std::uint64_t>("adam step");
  const auto count = r.get<std::uint64_t>("record count");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>("record name length");
    const std::string name = r.bytes(name_len, "record name");
    const auto rank = r.get<std::uint32_t>("record rank");
    if (rank > 8) throw CheckpointError("corrupt checkpoint: record " + name + " has rank " + std::to_string(rank));
    StoredTensor t;
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint64_t>("record shape"));
    const std::size_t n = shape_numel(t.shape);
    if (n > (std::size_t{1} << 32)) throw CheckpointError("corrupt checkpoint: record " + name + " is too large");
    t.values.resize(n);
    for (auto& v : t.values) v = r.get<double>("record payload");
    const auto slash = name.find('/');
    const std::string kind = name.substr(0, slash);
    const std::string key = slash == std::string::npos ? "" : name.substr(slash + 1);
    if (kind == "param") ck.params[key] = std::move(t);
    else if (kind == "adam_m") ck.adam_m[key] = std::move(t);
    else if (kind == "adam_v") ck.adam_v[key] = std::move(t);
    else throw CheckpointError("corrupt checkpoint: unknown record " + name);
  }
  if (!r.done()) throw CheckpointError("corrupt checkpoint: trailing bytes after records");
  return ck;
}

void load_parameters(SocialPatteRNN& model, const Checkpoint& ck) {
  for (const auto& [name, t] : ck.params) {
    if (!model.params().contains(name)) throw CheckpointError("checkpoint has unknown parameter " + name);
  }
  for (auto& [name, tensor] : model.params()) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second.shape != tensor.shape()) {
      throw CheckpointError("parameter " + name + " has shape " + shape_str(it->second.shape) + " in checkpoint but " +
                            shape_str(tensor.shape()) + " in model");
    }
    std::copy(it->second.values.begin(), it->second.values.end(), tensor.mutable_data().begin());
  }
}

AdamState adam_from_checkpoint(const Checkpoint& ck) {
  AdamState state;
  state.step = ck.adam_step;
  for (const auto& [name, t] : ck.adam_m) state.m[name] = t.values;
  for (const auto& [name, t] : ck.adam_v) state.v[name] = t.values;
  return state;
}

}  // namespace sprnn
