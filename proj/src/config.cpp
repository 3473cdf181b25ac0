#include "anople/config.hpp"

#include "anople/errors.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#ifndef ANOPLE_GIT_REVISION
#define ANOPLE_GIT_REVISION "unknown"
#endif

namespace anople {

using nlohmann::json;

const char* git_revision() { return ANOPLE_GIT_REVISION; }

CouplingMode parse_coupling(const std::string& s) {
  if (s == "bidirectional") return CouplingMode::bidirectional;
  if (s == "text_to_vision") return CouplingMode::text_to_vision;
  if (s == "vision_to_text") return CouplingMode::vision_to_text;
  if (s == "independent") return CouplingMode::independent;
  throw ConfigError("coupling: expected bidirectional|text_to_vision|vision_to_text|independent, got '" + s + "'");
}

ViewSignalMode parse_view_signal(const std::string& s) {
  if (s == "learned") return ViewSignalMode::learned;
  if (s == "zero") return ViewSignalMode::zero;
  if (s == "off") return ViewSignalMode::off;
  throw ConfigError("view_signal: expected learned|zero|off, got '" + s + "'");
}

AlignmentMode parse_alignment(const std::string& s) {
  if (s == "weighted") return AlignmentMode::weighted;
  if (s == "mean") return AlignmentMode::mean;
  if (s == "off") return AlignmentMode::off;
  throw ConfigError("alignment: expected weighted|mean|off, got '" + s + "'");
}

RunConfig RunConfig::visa_defaults() {
  RunConfig c;
  c.dataset = "visa";
  c.text_ctx = 5;
  c.vision_ctx = 8;
  c.memory_layers = {7, 8, 9};
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (dataset != "mvtec" && dataset != "visa" && dataset != "synthetic") {
    fail("dataset.name", "expected mvtec|visa|synthetic");
  }
  if (shots < 1) fail("shots", "must be at least 1");
  if (seeds.empty()) fail("seeds", "at least one seed is required");
  if (backbone.kind != "tiny" && backbone.kind != "pretrained") fail("backbone.kind", "expected tiny|pretrained");
  if (backbone.kind == "pretrained" && backbone.weights.empty()) fail("backbone.weights", "required for pretrained");
  if (backbone.activation != "gelu" && backbone.activation != "quick_gelu") {
    fail("backbone.activation", "expected gelu|quick_gelu");
  }
  if (backbone.prompt_depth < 1) fail("backbone.prompt_depth", "must be at least 1");
  if (text_ctx < 0) fail("prompts.text_ctx", "must be non-negative");
  if (vision_ctx < 0) fail("prompts.vision_ctx", "must be non-negative");
  if (views < 1) fail("prompts.views", "must be at least 1");
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(views))));
  if (g * g != views) fail("prompts.views", "must be a perfect square (grid of crops)");
  parse_coupling(coupling);
  parse_view_signal(view_signal);
  parse_alignment(alignment);
  if (epochs < 0) fail("training.epochs", "must be non-negative");
  if (repeats < 1) fail("training.repeats", "must be at least 1");
  if (!(lr_prompt >= 0)) fail("training.lr_prompt", "must be non-negative");
  if (!(lr_decoder >= 0)) fail("training.lr_decoder", "must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) fail("training.momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0)) fail("training.weight_decay", "must be non-negative");
  if (!(warmup_epochs >= 0)) fail("training.warmup_epochs", "must be non-negative");
  if (view_size < 1) fail("views.view_size", "must be positive");
  if (map_size < 0) fail("views.map_size", "must be non-negative");
  if (decoder_hidden < 0) fail("decoder.hidden", "must be non-negative");
  if (use_memory && memory_layers.empty()) fail("memory.layers", "must not be empty");
  if (!(latent_sigma >= 0)) fail("losses.latent_sigma", "must be non-negative");
  if (!(label_smoothing >= 0 && label_smoothing <= 1)) fail("losses.label_smoothing", "must lie in [0, 1]");
  if (!(focal_gamma >= 0)) fail("losses.focal_gamma", "must be non-negative");
  if (!(focal_alpha >= 0 && focal_alpha <= 1)) fail("losses.focal_alpha", "must lie in [0, 1]");
  if (!(dice_smoothing >= 0)) fail("losses.dice_smoothing", "must be non-negative");
  if (!(align_temperature > 0)) fail("losses.align_temperature", "must be positive");
}

BackboneConfig RunConfig::backbone_config() const {
  BackboneConfig b = backbone.kind == "tiny" ? BackboneConfig::tiny() : BackboneConfig::reference();
  b.text_heads = backbone.kind == "tiny" ? b.text_heads : backbone.text_heads;
  b.vision_heads = backbone.kind == "tiny" ? b.vision_heads : backbone.vision_heads;
  b.activation = backbone.activation == "gelu" ? Activation::gelu : Activation::quick_gelu;
  b.prompt_depth = backbone.prompt_depth;
  if (backbone.kind == "tiny") b.input_resolution = view_size;
  return b;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.prompts.text_ctx = text_ctx;
  m.prompts.vision_ctx = vision_ctx;
  m.prompts.views = views;
  m.prompts.coupling = parse_coupling(coupling);
  m.prompts.view_signal = parse_view_signal(view_signal);
  m.views.view_size = view_size;
  m.views.grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(views))));
  m.map_size = map_size;
  m.decoder_hidden = decoder_hidden;
  m.memory_layers = memory_layers;
  m.use_memory = use_memory;
  m.prompted_memory = prompted_memory;
  m.image_terms.pixel_space = pixel_simulation;
  m.image_terms.latent_space = latent_simulation;
  m.image_terms.latent_smoothing = label_smoothing;
  m.pixel_losses = pixel_simulation;
  m.alignment = parse_alignment(alignment);
  m.latent.mean = latent_mu;
  m.latent.stddev = latent_sigma;
  m.focal.gamma = focal_gamma;
  m.focal.alpha = focal_alpha;
  m.dice_smoothing = dice_smoothing;
  m.align_temperature = align_temperature;
  return m;
}

TrainConfig RunConfig::train_config(std::uint64_t seed) const {
  TrainConfig t;
  t.epochs = epochs;
  t.repeats = repeats;
  t.lr_prompt = lr_prompt;
  t.lr_decoder = lr_decoder;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.warmup_epochs = warmup_epochs;
  t.seed = seed;
  return t;
}

json to_json(const RunConfig& c) {
  return json{
      {"dataset", {{"root", c.dataset_root.string()}, {"name", c.dataset}, {"categories", c.categories}}},
      {"shots", c.shots},
      {"seeds", c.seeds},
      {"backbone",
       {{"kind", c.backbone.kind},
        {"weights", c.backbone.weights.string()},
        {"vocab", c.backbone.vocab.string()},
        {"text_heads", c.backbone.text_heads},
        {"vision_heads", c.backbone.vision_heads},
        {"activation", c.backbone.activation},
        {"prompt_depth", c.backbone.prompt_depth},
        {"seed", c.backbone.seed}}},
      {"prompts",
       {{"text_ctx", c.text_ctx},
        {"vision_ctx", c.vision_ctx},
        {"views", c.views},
        {"coupling", c.coupling},
        {"view_signal", c.view_signal}}},
      {"training",
       {{"epochs", c.epochs},
        {"repeats", c.repeats},
        {"lr_prompt", c.lr_prompt},
        {"lr_decoder", c.lr_decoder},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"warmup_epochs", c.warmup_epochs}}},
      {"views", {{"view_size", c.view_size}, {"map_size", c.map_size}}},
      {"decoder", {{"hidden", c.decoder_hidden}}},
      {"memory", {{"layers", c.memory_layers}, {"enabled", c.use_memory}, {"prompted", c.prompted_memory}}},
      {"losses",
       {{"pixel_simulation", c.pixel_simulation},
        {"latent_simulation", c.latent_simulation},
        {"alignment", c.alignment},
        {"latent_mu", c.latent_mu},
        {"latent_sigma", c.latent_sigma},
        {"label_smoothing", c.label_smoothing},
        {"focal_gamma", c.focal_gamma},
        {"focal_alpha", c.focal_alpha},
        {"dice_smoothing", c.dice_smoothing},
        {"align_temperature", c.align_temperature}}},
      {"texture_dir", c.texture_dir.string()},
      {"per_class", c.per_class},
      {"output_dir", c.output_dir.string()},
  };
}

namespace {

// Walks one JSON object, assigning known keys and rejecting the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where(key) + ": unknown configuration key");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      check_type<T>(*it);
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong value type");
    }
  }

  void path(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "<root>" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  template <typename T>
  static void check_type(const json& v) {
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer() && (!std::is_unsigned_v<T> || v.get<long long>() >= 0);
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else {
      ok = v.is_array();
    }
    if (!ok) throw json::type_error::create(302, "type mismatch", &v);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig from_json(const json& j, RunConfig c) {
  Section root(j, "");
  if (const json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    s.path("root", c.dataset_root);
    s.get("name", c.dataset);
    s.get("categories", c.categories);
  }
  root.get("shots", c.shots);
  root.get("seeds", c.seeds);
  if (const json* b = root.child("backbone")) {
    Section s(*b, "backbone");
    s.get("kind", c.backbone.kind);
    s.path("weights", c.backbone.weights);
    s.path("vocab", c.backbone.vocab);
    s.get("text_heads", c.backbone.text_heads);
    s.get("vision_heads", c.backbone.vision_heads);
    s.get("activation", c.backbone.activation);
    s.get("prompt_depth", c.backbone.prompt_depth);
    s.get("seed", c.backbone.seed);
  }
  if (const json* p = root.child("prompts")) {
    Section s(*p, "prompts");
    s.get("text_ctx", c.text_ctx);
    s.get("vision_ctx", c.vision_ctx);
    s.get("views", c.views);
    s.get("coupling", c.coupling);
    s.get("view_signal", c.view_signal);
  }
  if (const json* t = root.child("training")) {
    Section s(*t, "training");
    s.get("epochs", c.epochs);
    s.get("repeats", c.repeats);
    s.get("lr_prompt", c.lr_prompt);
    s.get("lr_decoder", c.lr_decoder);
    s.get("momentum", c.momentum);
    s.get("weight_decay", c.weight_decay);
    s.get("warmup_epochs", c.warmup_epochs);
  }
  if (const json* v = root.child("views")) {
    Section s(*v, "views");
    s.get("view_size", c.view_size);
    s.get("map_size", c.map_size);
  }
  if (const json* d = root.child("decoder")) {
    Section s(*d, "decoder");
    s.get("hidden", c.decoder_hidden);
  }
  if (const json* m = root.child("memory")) {
    Section s(*m, "memory");
    s.get("layers", c.memory_layers);
    s.get("enabled", c.use_memory);
    s.get("prompted", c.prompted_memory);
  }
  if (const json* l = root.child("losses")) {
    Section s(*l, "losses");
    s.get("pixel_simulation", c.pixel_simulation);
    s.get("latent_simulation", c.latent_simulation);
    s.get("alignment", c.alignment);
    s.get("latent_mu", c.latent_mu);
    s.get("latent_sigma", c.latent_sigma);
    s.get("label_smoothing", c.label_smoothing);
    s.get("focal_gamma", c.focal_gamma);
    s.get("focal_alpha", c.focal_alpha);
    s.get("dice_smoothing", c.dice_smoothing);
    s.get("align_temperature", c.align_temperature);
  }
  root.path("texture_dir", c.texture_dir);
  root.get("per_class", c.per_class);
  root.path("output_dir", c.output_dir);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig base;
  if (j.is_object() && j.contains("dataset") && j["dataset"].is_object() && j["dataset"].value("name", "") == "visa") {
    base = RunConfig::visa_defaults();
  }
  return from_json(j, base);
}

std::uint64_t config_hash(const RunConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace anople
