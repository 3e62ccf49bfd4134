#include "imuge/run_config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

#include "imuge/digest.hpp"
#include "imuge/errors.hpp"

namespace imuge {
namespace {

using nlohmann::json;

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T, class M>
Field plain(std::string key, M T::*member, T RunConfig::*section) {
  return {std::move(key), [=](const RunConfig& c) { return json((c.*section).*member); },
          [=](RunConfig& c, const json& v) { (c.*section).*member = v.get<M>(); }};
}

std::string norm_name(Normalization n) { return n == Normalization::instance ? "instance" : "batch"; }
Normalization parse_norm(const std::string& s) {
  if (s == "instance") return Normalization::instance;
  if (s == "batch") return Normalization::batch;
  throw ConfigError("unknown normalization: " + s);
}
std::string act_name(Activation a) { return a == Activation::relu ? "relu" : "leaky_relu"; }
Activation parse_act(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw ConfigError("unknown activation: " + s);
}
std::string pool_name(Pooling p) { return p == Pooling::max ? "max" : "average"; }
Pooling parse_pool(const std::string& s) {
  if (s == "max") return Pooling::max;
  if (s == "average") return Pooling::average;
  throw ConfigError("unknown pooling: " + s);
}
std::string shape_name(RegionShape s) { return s == RegionShape::rectangle ? "rectangle" : "ellipse"; }
RegionShape parse_shape(const std::string& s) {
  if (s == "rectangle") return RegionShape::rectangle;
  if (s == "ellipse") return RegionShape::ellipse;
  throw ConfigError("unknown region shape: " + s);
}
std::string split_name(Split s) { return s == Split::all ? "all" : s == Split::train ? "train" : "eval"; }
Split parse_split(const std::string& s) {
  if (s == "all") return Split::all;
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  throw ConfigError("unknown split: " + s);
}
std::string rounding_name(RoundingSurrogate r) {
  switch (r) {
    case RoundingSurrogate::straight_through: return "straight_through";
    case RoundingSurrogate::cubic: return "cubic";
    case RoundingSurrogate::none: return "none";
  }
  return "straight_through";
}
RoundingSurrogate parse_rounding(const std::string& s) {
  if (s == "straight_through") return RoundingSurrogate::straight_through;
  if (s == "cubic") return RoundingSurrogate::cubic;
  if (s == "none") return RoundingSurrogate::none;
  throw ConfigError("unknown rounding surrogate: " + s);
}

template <class E>
json names_of(const std::vector<E>& v) {
  json out = json::array();
  for (const auto& e : v) out.push_back(to_string(e));
  return out;
}

void mask_fields(std::vector<Field>& f, const std::string& prefix, MaskSpec RunConfig::*section) {
  auto sec = [section](RunConfig& c) -> MaskSpec& { return c.*section; };
  auto csec = [section](const RunConfig& c) -> const MaskSpec& { return c.*section; };
  f.push_back({prefix + ".rst_lo", [=](const RunConfig& c) { return json(csec(c).rst.lo); },
               [=](RunConfig& c, const json& v) { sec(c).rst.lo = v.get<double>(); }});
  f.push_back({prefix + ".rst_hi", [=](const RunConfig& c) { return json(csec(c).rst.hi); },
               [=](RunConfig& c, const json& v) { sec(c).rst.hi = v.get<double>(); }});
  f.push_back({prefix + ".rlt_lo", [=](const RunConfig& c) { return json(csec(c).rlt.lo); },
               [=](RunConfig& c, const json& v) { sec(c).rlt.lo = v.get<double>(); }});
  f.push_back({prefix + ".rlt_hi", [=](const RunConfig& c) { return json(csec(c).rlt.hi); },
               [=](RunConfig& c, const json& v) { sec(c).rlt.hi = v.get<double>(); }});
  f.push_back({prefix + ".min_regions", [=](const RunConfig& c) { return json(csec(c).min_regions); },
               [=](RunConfig& c, const json& v) { sec(c).min_regions = v.get<int>(); }});
  f.push_back({prefix + ".max_regions", [=](const RunConfig& c) { return json(csec(c).max_regions); },
               [=](RunConfig& c, const json& v) { sec(c).max_regions = v.get<int>(); }});
  f.push_back({prefix + ".shape", [=](const RunConfig& c) { return json(shape_name(csec(c).shape)); },
               [=](RunConfig& c, const json& v) { sec(c).shape = parse_shape(v.get<std::string>()); }});
}


const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using RC = RunConfig;
    // train
    f.push_back(plain("train.epochs_total", &TrainConfig::epochs_total, &RC::train));
    f.push_back(plain("train.epochs_per_phase", &TrainConfig::epochs_per_phase, &RC::train));
    f.push_back(plain("train.decoupling_lift_epoch", &TrainConfig::decoupling_lift_epoch, &RC::train));
    f.push_back(plain("train.fade_fraction", &TrainConfig::fade_fraction, &RC::train));
    f.push_back(plain("train.batch_size", &TrainConfig::batch_size, &RC::train));
    f.push_back(plain("train.learning_rate", &TrainConfig::learning_rate, &RC::train));
    f.push_back(plain("train.adam_beta1", &TrainConfig::adam_beta1, &RC::train));
    f.push_back(plain("train.adam_beta2", &TrainConfig::adam_beta2, &RC::train));
    f.push_back({"train.alpha", [](const RC& c) { return json(c.train.weights.alpha); },
                 [](RC& c, const json& v) { c.train.weights.alpha = v.get<double>(); }});
    f.push_back({"train.beta", [](const RC& c) { return json(c.train.weights.beta); },
                 [](RC& c, const json& v) { c.train.weights.beta = v.get<double>(); }});
    f.push_back({"train.gamma", [](const RC& c) { return json(c.train.weights.gamma); },
                 [](RC& c, const json& v) { c.train.weights.gamma = v.get<double>(); }});
    f.push_back({"train.theta", [](const RC& c) { return json(c.train.weights.theta); },
                 [](RC& c, const json& v) { c.train.weights.theta = v.get<double>(); }});
    f.push_back(plain("train.p_skip", &TrainConfig::p_skip, &RC::train));
    f.push_back(plain("train.seed", &TrainConfig::seed, &RC::train));
    f.push_back(plain("train.auto_lift", &TrainConfig::auto_lift, &RC::train));
    f.push_back(plain("train.lift_window", &TrainConfig::lift_window, &RC::train));
    f.push_back(plain("train.lift_patience", &TrainConfig::lift_patience, &RC::train));
    f.push_back(plain("train.lift_tolerance", &TrainConfig::lift_tolerance, &RC::train));
    f.push_back(plain("train.checkpoint_every", &TrainConfig::checkpoint_every, &RC::train));
    f.push_back(plain("train.task_decoupling", &TrainConfig::task_decoupling, &RC::train));
    f.push_back(plain("train.use_discriminators", &TrainConfig::use_discriminators, &RC::train));
    f.push_back(plain("train.use_verifier", &TrainConfig::use_verifier, &RC::train));
    // data
    f.push_back({"data.root", [](const RC& c) { return json(c.data.root.string()); },
                 [](RC& c, const json& v) { c.data.root = v.get<std::string>(); }});
    f.push_back(plain("data.image_size", &DatasetConfig::image_size, &RC::data));
    f.push_back({"data.split", [](const RC& c) { return json(split_name(c.data.split)); },
                 [](RC& c, const json& v) { c.data.split = parse_split(v.get<std::string>()); }});
    f.push_back(plain("data.eval_fraction", &DatasetConfig::eval_fraction, &RC::data));
    f.push_back(plain("data.limit", &DatasetConfig::limit, &RC::data));
    f.push_back(plain("data.seed", &DatasetConfig::seed, &RC::data));
    // model
    f.push_back(plain("model.base_width", &ModelConfig::base_width, &RC::model));
    f.push_back(plain("model.discriminator_width", &ModelConfig::discriminator_width, &RC::model));
    f.push_back({"model.normalization", [](const RC& c) { return json(norm_name(c.model.normalization)); },
                 [](RC& c, const json& v) { c.model.normalization = parse_norm(v.get<std::string>()); }});
    f.push_back({"model.activation", [](const RC& c) { return json(act_name(c.model.activation)); },
                 [](RC& c, const json& v) { c.model.activation = parse_act(v.get<std::string>()); }});
    f.push_back({"model.pooling", [](const RC& c) { return json(pool_name(c.model.pooling)); },
                 [](RC& c, const json& v) { c.model.pooling = parse_pool(v.get<std::string>()); }});
    f.push_back(plain("model.dilation_rates", &ModelConfig::dilation_rates, &RC::model));
    f.push_back(plain("model.feature_sharing", &ModelConfig::feature_sharing, &RC::model));
    f.push_back(plain("model.decoder_mask_channel", &ModelConfig::decoder_mask_channel, &RC::model));
    f.push_back(plain("model.zero_init_residual", &ModelConfig::zero_init_residual, &RC::model));
    // training masks
    mask_fields(f, "mask", &RC::mask);
    // attack sampler
    f.push_back({"attacks.benign_kinds", [](const RC& c) { return names_of(c.attacks.benign_kinds); },
                 [](RC& c, const json& v) {
                   c.attacks.benign_kinds.clear();
                   for (const auto& s : v) c.attacks.benign_kinds.push_back(parse_benign_kind(s.get<std::string>()));
                 }});
    f.push_back({"attacks.tamper_modes", [](const RC& c) { return names_of(c.attacks.tamper_modes); },
                 [](RC& c, const json& v) {
                   c.attacks.tamper_modes.clear();
                   for (const auto& s : v) c.attacks.tamper_modes.push_back(parse_tamper_mode(s.get<std::string>()));
                 }});
    f.push_back(plain("attacks.quality_min", &AttackSamplerConfig::quality_min, &RC::attacks));
    f.push_back(plain("attacks.quality_max", &AttackSamplerConfig::quality_max, &RC::attacks));
    f.push_back(plain("attacks.scale_min", &AttackSamplerConfig::scale_min, &RC::attacks));
    f.push_back(plain("attacks.scale_max", &AttackSamplerConfig::scale_max, &RC::attacks));
    f.push_back(plain("attacks.kernels", &AttackSamplerConfig::kernels, &RC::attacks));
    f.push_back(plain("attacks.sigma", &AttackSamplerConfig::sigma, &RC::attacks));
    f.push_back({"attacks.jpeg_rounding", [](const RC& c) { return json(rounding_name(c.attacks.jpeg.rounding)); },
                 [](RC& c, const json& v) { c.attacks.jpeg.rounding = parse_rounding(v.get<std::string>()); }});
    f.push_back({"attacks.jpeg_chroma_subsampling",
                 [](const RC& c) { return json(c.attacks.jpeg.chroma_subsampling); },
                 [](RC& c, const json& v) { c.attacks.jpeg.chroma_subsampling = v.get<bool>(); }});
    // evaluation grid
    f.push_back(plain("grid.jpeg_qualities", &GridConfig::jpeg_qualities, &RC::grid));
    f.push_back(plain("grid.scales", &GridConfig::scales, &RC::grid));
    f.push_back(plain("grid.crop_fractions", &GridConfig::crop_fractions, &RC::grid));
    f.push_back(plain("grid.blur_kernel", &GridConfig::blur_kernel, &RC::grid));
    f.push_back(plain("grid.awgn_sigma", &GridConfig::awgn_sigma, &RC::grid));
    {
      auto g = [](RC& c) -> MaskSpec& { return c.grid.mask; };
      auto cg = [](const RC& c) -> const MaskSpec& { return c.grid.mask; };
      f.push_back({"grid.mask.rst_lo", [=](const RC& c) { return json(cg(c).rst.lo); },
                   [=](RC& c, const json& v) { g(c).rst.lo = v.get<double>(); }});
      f.push_back({"grid.mask.rst_hi", [=](const RC& c) { return json(cg(c).rst.hi); },
                   [=](RC& c, const json& v) { g(c).rst.hi = v.get<double>(); }});
      f.push_back({"grid.mask.rlt_lo", [=](const RC& c) { return json(cg(c).rlt.lo); },
                   [=](RC& c, const json& v) { g(c).rlt.lo = v.get<double>(); }});
      f.push_back({"grid.mask.rlt_hi", [=](const RC& c) { return json(cg(c).rlt.hi); },
                   [=](RC& c, const json& v) { g(c).rlt.hi = v.get<double>(); }});
      f.push_back({"grid.mask.min_regions", [=](const RC& c) { return json(cg(c).min_regions); },
                   [=](RC& c, const json& v) { g(c).min_regions = v.get<int>(); }});
      f.push_back({"grid.mask.max_regions", [=](const RC& c) { return json(cg(c).max_regions); },
                   [=](RC& c, const json& v) { g(c).max_regions = v.get<int>(); }});
      f.push_back({"grid.mask.shape", [=](const RC& c) { return json(shape_name(cg(c).shape)); },
                   [=](RC& c, const json& v) { g(c).shape = parse_shape(v.get<std::string>()); }});
    }
    f.push_back({"grid.tamper_modes", [](const RC& c) { return names_of(c.grid.tamper_modes); },
                 [](RC& c, const json& v) {
                   c.grid.tamper_modes.clear();
                   for (const auto& s : v) c.grid.tamper_modes.push_back(parse_tamper_mode(s.get<std::string>()));
                 }});
    f.push_back(plain("grid.refine_kernel", &GridConfig::refine_kernel, &RC::grid));
    f.push_back(plain("grid.stratified", &GridConfig::stratified, &RC::grid));
    f.push_back(plain("grid.seed", &GridConfig::seed, &RC::grid));
    // output
    f.push_back({"output_dir", [](const RC& c) { return json(c.output_dir.string()); },
                 [](RC& c, const json& v) { c.output_dir = v.get<std::string>(); }});
    return f;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  data.validate();
  model.validate();
  mask.validate();
  attacks.validate();
  grid.mask.validate();
  if (grid.jpeg_qualities.empty() || grid.scales.empty() || grid.crop_fractions.empty()) {
    throw ConfigError("grid: attack parameter lists must not be empty");
  }
  if (grid.tamper_modes.empty()) throw ConfigError("grid.tamper_modes must not be empty");
  if (grid.blur_kernel < 3 || grid.blur_kernel % 2 == 0) throw ConfigError("grid.blur_kernel must be odd and >= 3");
  if (grid.refine_kernel < 1) throw ConfigError("grid.refine_kernel must be >= 1");
}

std::string RunConfig::to_json() const {
  // nlohmann's default object keeps keys sorted, which makes the dump canonical.
  json out = json::object();
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!in.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig config;
  for (auto it = in.begin(); it != in.end(); ++it) {
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.key == it.key()) {
        field = &f;
        break;
      }
    }
    if (!field) throw ConfigError("unknown config key: " + it.key());
    try {
      field->set(config, it.value());
    } catch (const json::exception& e) {
      throw ConfigError("bad value for " + it.key() + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_json() << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

std::string RunConfig::hash() const {
  // The output directory is where artifacts go, not what produced them.
  json out = json::object();
  for (const auto& f : fields()) {
    if (f.key != "output_dir") out[f.key] = f.get(*this);
  }
  return sha256_hex(out.dump()).substr(0, 16);
}

}  // namespace imuge
