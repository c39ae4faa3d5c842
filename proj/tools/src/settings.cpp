#include "cms_app/settings.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <utility>

#include "cms/error.hpp"

namespace cms::app {

std::string_view to_string(Method method) {
  return method == Method::kWardMeanShift ? "ward-ms" : "ssk";
}

Method parse_method(std::string_view token) {
  if (token == "ward-ms") return Method::kWardMeanShift;
  if (token == "ssk") return Method::kSemiSupervisedKMeans;
  throw Error(ErrorCode::kValidation, "unknown method '" + std::string(token) + "' (expected ward-ms or ssk)");
}

void RunSettings::validate() const {
  train.validate();
  infer.validate();
  if (threads == 0) throw Error(ErrorCode::kValidation, "threads must be positive");
}

RunSettings default_settings() { return RunSettings{}; }

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, std::string_view expected) {
  throw Error(ErrorCode::kValidation, key + ": '" + value + "' is not " + std::string(expected));
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(to_u64(key, value));
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean");
}

using Setter = std::function<void(RunSettings&, const std::string& key, const std::string& value)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      // synthetic data
      {"classes", [](RunSettings& s, auto& k, auto& v) { s.synthetic.num_classes = to_size(k, v); }},
      {"dim", [](RunSettings& s, auto& k, auto& v) { s.synthetic.dim = to_size(k, v); }},
      {"per-class", [](RunSettings& s, auto& k, auto& v) { s.synthetic.per_class = to_size(k, v); }},
      {"center-max-cosine", [](RunSettings& s, auto& k, auto& v) { s.synthetic.center_max_cosine = to_double(k, v); }},
      {"noise-scale", [](RunSettings& s, auto& k, auto& v) { s.synthetic.noise_scale = to_double(k, v); }},
      {"known-fraction", [](RunSettings& s, auto& k, auto& v) { s.synthetic.known_fraction = to_double(k, v); }},
      {"labeled-fraction", [](RunSettings& s, auto& k, auto& v) { s.synthetic.labeled_fraction = to_double(k, v); }},
      {"val-fraction", [](RunSettings& s, auto& k, auto& v) { s.synthetic.val_fraction = to_double(k, v); }},
      // run-wide
      {"seed",
       [](RunSettings& s, auto& k, auto& v) {
         s.seed = to_u64(k, v);
         s.synthetic.seed = s.seed;
         s.train.seed = s.seed;
         s.train.head.init_seed = s.seed;
       }},
      {"threads", [](RunSettings& s, auto& k, auto& v) { s.threads = to_size(k, v); }},
      {"preset", [](RunSettings& s, auto&, auto& v) { s.preset = parse_preset(v); }},
      {"method", [](RunSettings& s, auto&, auto& v) { s.method = parse_method(v); }},
      // training
      {"epochs", [](RunSettings& s, auto& k, auto& v) { s.train.epochs = to_size(k, v); }},
      {"kernel", [](RunSettings& s, auto&, auto& v) { s.train.kernel.kind = parse_kernel_kind(v); }},
      {"k", [](RunSettings& s, auto& k, auto& v) { s.train.kernel.k = to_size(k, v); }},
      {"alpha", [](RunSettings& s, auto& k, auto& v) { s.train.kernel.alpha = to_double(k, v); }},
      {"delta", [](RunSettings& s, auto& k, auto& v) { s.train.kernel.delta = to_double(k, v); }},
      {"sigma", [](RunSettings& s, auto& k, auto& v) { s.train.kernel.sigma = to_double(k, v); }},
      {"max-neighbors", [](RunSettings& s, auto& k, auto& v) { s.train.kernel.max_neighbors = to_size(k, v); }},
      {"include-self", [](RunSettings& s, auto& k, auto& v) { s.train.kernel.include_self_in_topk = to_bool(k, v); }},
      {"tau-u", [](RunSettings& s, auto& k, auto& v) { s.train.loss.tau_u = to_double(k, v); }},
      {"tau-s", [](RunSettings& s, auto& k, auto& v) { s.train.loss.tau_s = to_double(k, v); }},
      {"lambda", [](RunSettings& s, auto& k, auto& v) { s.train.loss.lambda = to_double(k, v); }},
      {"symmetric", [](RunSettings& s, auto& k, auto& v) { s.train.loss.symmetric = to_bool(k, v); }},
      {"simclr-denominator",
       [](RunSettings& s, auto& k, auto& v) { s.train.loss.simclr_denominator = to_bool(k, v); }},
      {"lr", [](RunSettings& s, auto& k, auto& v) { s.train.optimizer.learning_rate = to_double(k, v); }},
      {"weight-decay", [](RunSettings& s, auto& k, auto& v) { s.train.optimizer.weight_decay = to_double(k, v); }},
      {"momentum", [](RunSettings& s, auto& k, auto& v) { s.train.optimizer.momentum = to_double(k, v); }},
      {"batch-size", [](RunSettings& s, auto& k, auto& v) { s.train.optimizer.batch_size = to_size(k, v); }},
      {"hidden-dim", [](RunSettings& s, auto& k, auto& v) { s.train.head.hidden_dim = to_size(k, v); }},
      {"out-dim", [](RunSettings& s, auto& k, auto& v) { s.train.head.out_dim = to_size(k, v); }},
      {"num-blocks", [](RunSettings& s, auto& k, auto& v) { s.train.head.num_blocks = to_size(k, v); }},
      {"view-noise", [](RunSettings& s, auto& k, auto& v) { s.train.view_noise_scale = to_double(k, v); }},
      {"k-search-max", [](RunSettings& s, auto& k, auto& v) { s.train.k_search_max = to_size(k, v); }},
      {"k-search-min", [](RunSettings& s, auto& k, auto& v) { s.train.k_search_min = to_size(k, v); }},
      {"use-gt-k-validation",
       [](RunSettings& s, auto& k, auto& v) { s.train.use_gt_k_for_validation = to_bool(k, v); }},
      {"per-view-neighbors", [](RunSettings& s, auto& k, auto& v) { s.train.per_view_neighbors = to_bool(k, v); }},
      // gt-k serves both the validation "ground-truth K" mode and the inference override
      {"gt-k",
       [](RunSettings& s, auto& k, auto& v) {
         s.train.gt_k = to_size(k, v);
         s.infer.k_override = s.train.gt_k;
       }},
      // inference
      {"t-max", [](RunSettings& s, auto& k, auto& v) { s.infer.t_max = to_size(k, v); }},
      {"scope",
       [](RunSettings& s, auto& k, auto& v) {
         if (v == "labeled") {
           s.infer.scope = LabeledScope::kLabeledItems;
         } else if (v == "validation") {
           s.infer.scope = LabeledScope::kLabeledValidationItems;
         } else {
           bad_value(k, v, "labeled or validation");
         }
       }},
  };
  return table;
}

void apply_all(RunSettings& settings, const KeyValues& values) {
  for (const auto& [key, value] : values) {
    if (key != "preset") apply_setting(settings, key, value);
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [key, setter] : setters()) out.push_back(key);
    return out;
  }();
  return keys;
}

void apply_setting(RunSettings& settings, const std::string& key, const std::string& value) {
  for (const auto& [name, setter] : setters()) {
    if (name == key) {
      setter(settings, key, value);
      return;
    }
  }
  throw Error(ErrorCode::kValidation, "unknown setting '" + key + "'");
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": expected key=value");
    }
    out[trim(std::string_view(stripped).substr(0, eq))] = trim(std::string_view(stripped).substr(eq + 1));
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_key_values(text.str());
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [key, value] : values) out += key + "=" + value + "\n";
  return out;
}

RunSettings resolve_settings(const KeyValues& file, const KeyValues& flags, const KeyValues& base) {
  RunSettings settings = default_settings();
  apply_all(settings, base);
  std::optional<std::string> preset;
  if (const auto it = file.find("preset"); it != file.end()) preset = it->second;
  if (const auto it = flags.find("preset"); it != flags.end()) preset = it->second;
  if (preset) {
    apply_setting(settings, "preset", *preset);
    apply_preset(settings.train, *settings.preset);
  }
  apply_all(settings, file);
  apply_all(settings, flags);
  return settings;
}

std::string describe(const RunSettings& s) {
  std::ostringstream out;
  out.precision(10);
  const auto& t = s.train;
  out << "preset=" << (s.preset ? (*s.preset == Preset::kCoarse ? "coarse" : "fine") : "none")
      << " tau_u=" << t.loss.tau_u << " tau_s=" << t.loss.tau_s << " lambda=" << t.loss.lambda
      << " lr=" << t.optimizer.learning_rate << " weight_decay=" << t.optimizer.weight_decay
      << " momentum=" << t.optimizer.momentum << " batch_size=" << t.optimizer.batch_size
      << " epochs=" << t.epochs << " kernel=" << to_string(t.kernel.kind) << " k=" << t.kernel.k
      << " alpha=" << t.kernel.alpha << " head=" << t.head.in_dim << "x" << t.head.hidden_dim << "x"
      << t.head.out_dim << "/" << t.head.num_blocks << " view_noise=" << t.view_noise_scale << " seed=" << s.seed;
  return out.str();
}

}  // namespace cms::app
