#include "impd/nn/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace impd {

namespace {

constexpr char kMagic[4] = {'I', 'M', 'P', 'D'};
constexpr uint32_t kVersion = 1;

// Depth head bounds in log space.
const double kLogMid = 0.5 * (std::log(RegressionModel::kMinDepth) +
                              std::log(RegressionModel::kMaxDepth));
const double kLogHalf = 0.5 * (std::log(RegressionModel::kMaxDepth) -
                               std::log(RegressionModel::kMinDepth));

Encoder make_encoder(const ModelConfig& config, Rng& rng) {
  Encoder enc;
  int in = config.input_channels();
  for (int i = 0; i < 4; ++i) {
    enc.convs[size_t(i)].init("encoder.conv" + std::to_string(i), in,
                              config.widths[size_t(i)], config.strides[size_t(i)],
                              rng);
    in = config.widths[size_t(i)];
  }
  return enc;
}

template <typename Model>
std::vector<Parameter*> collect_parameters(Model& m) {
  std::vector<Parameter*> out;
  for (Conv2d& c : m.encoder.convs) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  if constexpr (requires { m.mlp; }) {
    for (Linear* l : {&m.mlp.fc0, &m.mlp.fc1, &m.mlp.fc2}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
  } else {
    out.push_back(&m.head.weight);
    out.push_back(&m.head.bias);
  }
  return out;
}

void write_params_f32(std::ofstream& out,
                      std::span<const Parameter* const> params) {
  for (const Parameter* p : params) {
    std::vector<float> buf(p->size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(p->value[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              std::streamsize(buf.size() * sizeof(float)));
  }
}

void read_params_f32(std::ifstream& in, std::span<Parameter* const> params,
                     const std::string& path) {
  for (Parameter* p : params) {
    std::vector<float> buf(p->size());
    in.read(reinterpret_cast<char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
    if (!in) throw FormatError("checkpoint: truncated parameter data in " + path);
    for (size_t i = 0; i < buf.size(); ++i) {
      if (!std::isfinite(buf[i]))
        throw FormatError("checkpoint: non-finite weight in '" + p->name +
                          "' in " + path);
      p->value[i] = double(buf[i]);
    }
  }
}

void save_checkpoint_impl(const std::filesystem::path& path,
                          const ModelConfig& config, ModelKind kind,
                          std::span<const Parameter* const> params,
                          const nlohmann::json& meta) {
  nlohmann::json header;
  header["kind"] = kind == ModelKind::kImplicit ? "implicit" : "regression";
  header["config"] = config;
  if (!meta.is_null()) header["meta"] = meta;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open " + path.string());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  const uint32_t header_len = uint32_t(header_str.size());
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header_str.data(), std::streamsize(header_str.size()));
  write_params_f32(out, params);
  if (!out) throw FormatError("checkpoint: short write to " + path.string());
}

}  // namespace

void ModelConfig::validate() const {
  if (feature_channels < 1) throw ConfigError("model: K must be >= 1");
  if (widths[3] != feature_channels)
    throw ConfigError("model: last encoder width must equal K");
  for (const int w : widths)
    if (w < 1) throw ConfigError("model: encoder widths must be positive");
  const int s = stride();
  if (s != 1 && s != 2 && s != 4)
    throw ConfigError("model: stride product must be 1, 2 or 4");
  if (mlp_hidden < 1) throw ConfigError("model: mlp hidden width must be >= 1");
  if (context_frames < 0) throw ConfigError("model: negative context frames");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"feature_channels", c.feature_channels},
       {"widths", c.widths},
       {"strides", c.strides},
       {"mlp_hidden", c.mlp_hidden},
       {"context_frames", c.context_frames}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("feature_channels").get_to(c.feature_channels);
  j.at("widths").get_to(c.widths);
  j.at("strides").get_to(c.strides);
  j.at("mlp_hidden").get_to(c.mlp_hidden);
  j.at("context_frames").get_to(c.context_frames);
}

std::vector<Parameter*> ImplicitModel::parameters() {
  return collect_parameters(*this);
}
std::vector<const Parameter*> ImplicitModel::parameters() const {
  auto mut = collect_parameters(const_cast<ImplicitModel&>(*this));
  return {mut.begin(), mut.end()};
}
std::vector<Parameter*> RegressionModel::parameters() {
  return collect_parameters(*this);
}
std::vector<const Parameter*> RegressionModel::parameters() const {
  auto mut = collect_parameters(const_cast<RegressionModel&>(*this));
  return {mut.begin(), mut.end()};
}

double regression_depth_from_preactivation(double pre) {
  return std::exp(kLogMid + kLogHalf * std::tanh(pre));
}

double regression_depth_derivative(double pre) {
  const double t = std::tanh(pre);
  return regression_depth_from_preactivation(pre) * kLogHalf * (1.0 - t * t);
}

ImplicitModel make_implicit_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed ^ 0x1337c0deULL);
  ImplicitModel m;
  m.config = config;
  m.encoder = make_encoder(config, rng);
  m.mlp = make_mlp(config.feature_channels + 2, config.mlp_hidden, rng);
  return m;
}

RegressionModel make_regression_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed ^ 0x1337c0deULL);
  RegressionModel m;
  m.config = config;
  m.encoder = make_encoder(config, rng);
  m.head.init("head", config.feature_channels, 1, 1, rng);
  return m;
}

FeatureMap encode_features(const ImplicitModel& model, const Image& input) {
  return encoder_forward(model.encoder, input);
}

FeatureMap encode_features(const RegressionModel& model, const Image& input) {
  return encoder_forward(model.encoder, input);
}

double mlp_forward(const ImplicitModel& model, std::span<const double> feature,
                   double d_virtual, double prev) {
  const int k = model.config.feature_channels;
  if (int(feature.size()) != k)
    throw ShapeError("mlp_forward: feature length " +
                     std::to_string(feature.size()) + ", expected " +
                     std::to_string(k));
  Eigen::MatrixXd x(k + 2, 1);
  for (int i = 0; i < k; ++i) x(i, 0) = feature[size_t(i)];
  x(k, 0) = d_virtual;
  x(k + 1, 0) = prev;
  return mlp_forward_batch(model.mlp, x)(0);
}

void save_checkpoint(const std::filesystem::path& path, const ImplicitModel& m,
                     const nlohmann::json& meta) {
  const auto params = m.parameters();
  save_checkpoint_impl(path, m.config, ModelKind::kImplicit,
                       std::span<const Parameter* const>(params), meta);
}

void save_checkpoint(const std::filesystem::path& path, const RegressionModel& m,
                     const nlohmann::json& meta) {
  const auto params = m.parameters();
  save_checkpoint_impl(path, m.config, ModelKind::kRegression,
                       std::span<const Parameter* const>(params), meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[4];
  uint32_t version = 0, header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_len), 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path.string());
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version in " + path.string());
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw FormatError("checkpoint: truncated header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad header JSON in " + path.string() + ": " +
                      e.what());
  }

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const ModelConfig config = header.at("config").get<ModelConfig>();
  const std::string kind = header.at("kind");
  if (kind == "implicit") {
    ckpt.kind = ModelKind::kImplicit;
    ckpt.implicit = make_implicit_model(config, 0);
    auto params = ckpt.implicit->parameters();
    read_params_f32(in, params, path.string());
  } else if (kind == "regression") {
    ckpt.kind = ModelKind::kRegression;
    ckpt.regression = make_regression_model(config, 0);
    auto params = ckpt.regression->parameters();
    read_params_f32(in, params, path.string());
  } else {
    throw FormatError("checkpoint: unknown model kind '" + kind + "' in " +
                      path.string());
  }
  return ckpt;
}

double gradient_check_coords(std::span<Parameter* const> params,
                             const std::function<double()>& loss_fn,
                             int min_coords, uint64_t seed, double epsilon,
                             double floor) {
  size_t total = 0;
  for (const Parameter* p : params) total += p->size();
  if (total == 0) throw ConfigError("gradient_check: no parameters");

  Rng rng(seed ^ 0x6e4dc8ecULL);
  double max_rel = 0.0;
  const int coords = std::max(min_coords, 1);
  for (int i = 0; i < coords; ++i) {
    // sample a coordinate uniformly over the concatenated parameter vector
    size_t flat = size_t(rng.uniform_index(total));
    Parameter* target = nullptr;
    for (Parameter* p : params) {
      if (flat < p->size()) {
        target = p;
        break;
      }
      flat -= p->size();
    }
    const double saved = target->value[flat];
    target->value[flat] = saved + epsilon;
    const double loss_plus = loss_fn();
    target->value[flat] = saved - epsilon;
    const double loss_minus = loss_fn();
    target->value[flat] = saved;

    const double fd = (loss_plus - loss_minus) / (2.0 * epsilon);
    const double analytic = target->grad[flat];
    const double rel = std::abs(fd - analytic) /
                       std::max({std::abs(fd), std::abs(analytic), floor});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace impd
