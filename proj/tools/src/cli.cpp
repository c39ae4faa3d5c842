#include "cms_app/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "cms/error.hpp"
#include "cms_app/pipeline.hpp"
#include "cms_app/settings.hpp"

namespace cms::app {
namespace {

namespace fs = std::filesystem;

// Raised for anything the user can fix by changing flags or config.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SettingsArgs {
  std::string config;
  KeyValues flags;
};

struct DataArgs {
  std::string embeddings;
  std::string manifest;
  std::string view_a;
  std::string view_b;
};

void add_settings_options(CLI::App* sub, SettingsArgs& args) {
  sub->add_option("--config", args.config, "key=value config file");
  for (const auto& key : config_keys()) {
    sub->add_option_function<std::string>(
        "--" + key, [&args, key](const std::string& v) { args.flags[key] = v; }, "setting '" + key + "'");
  }
}

void add_data_options(CLI::App* sub, DataArgs& args) {
  sub->add_option("--embeddings", args.embeddings, "EMB1 base features")->required();
  sub->add_option("--manifest", args.manifest, "dataset manifest csv")->required();
  sub->add_option("--view-a", args.view_a, "EMB1 features of the first augmented view");
  sub->add_option("--view-b", args.view_b, "EMB1 features of the second augmented view");
}

RunSettings resolve(const SettingsArgs& args, const KeyValues& base = {}) {
  try {
    const KeyValues file = args.config.empty() ? KeyValues{} : load_key_values(args.config);
    auto settings = resolve_settings(file, args.flags, base);
    settings.validate();
    return settings;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

EmbeddingBank load_bank(const std::string& path, std::ostream& err) {
  auto bank = load_embedding_bank(path);
  if (bank.renormalized()) err << "warning: " << path << " had rows off unit norm; renormalized\n";
  return bank;
}

// Loaded inputs; the full manifest stays here, the pipeline sees only the view.
struct LoadedData {
  EmbeddingBank base;
  DatasetManifest manifest;
  ManifestView view;
  std::unique_ptr<EmbeddingBank> view_a;
  std::unique_ptr<EmbeddingBank> view_b;

  PipelineInputs inputs() const { return {&base, &view, view_a.get(), view_b.get()}; }
};

LoadedData load_data(const DataArgs& args, std::ostream& err) {
  if (args.view_a.empty() != args.view_b.empty()) throw UsageError("--view-a and --view-b go together");
  LoadedData data{load_bank(args.embeddings, err), load_manifest(args.manifest), {}, nullptr, nullptr};
  data.view = ManifestView(data.manifest);
  if (!args.view_a.empty()) {
    data.view_a = std::make_unique<EmbeddingBank>(load_bank(args.view_a, err));
    data.view_b = std::make_unique<EmbeddingBank>(load_bank(args.view_b, err));
  }
  return data;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

fs::path meta_path(const fs::path& file) {
  fs::path p = file;
  p += ".meta";
  return p;
}

// Settings a checkpoint carries forward to inference.
std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

KeyValues checkpoint_meta(const RunSettings& s, const FitResult& fit) {
  const auto& kernel = s.train.kernel;
  return {{"kernel", std::string(to_string(kernel.kind))},
          {"k", std::to_string(kernel.k)},
          {"alpha", shortest(kernel.alpha)},
          {"delta", shortest(kernel.delta)},
          {"sigma", shortest(kernel.sigma)},
          {"max-neighbors", std::to_string(kernel.max_neighbors)},
          {"include-self", kernel.include_self_in_topk ? "true" : "false"},
          {"seed", std::to_string(s.seed)},
          {"estimated-k", std::to_string(fit.best_estimated_k)},
          {"best-epoch", std::to_string(fit.best_epoch)},
          {"best-val-accuracy", fixed(fit.best_val_accuracy)}};
}

constexpr const char* kMetaOnlyKeys[] = {"estimated-k", "best-epoch", "best-val-accuracy"};

int cmd_generate(const SettingsArgs& sargs, const std::string& out_dir, std::ostream& out) {
  const auto settings = resolve(sargs);
  try {
    settings.synthetic.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto ds = generate_synthetic(settings.synthetic);
  fs::create_directories(out_dir);
  save_embedding_bank(ds.bank, fs::path(out_dir) / "embeddings.emb1");
  save_manifest(ds.manifest, fs::path(out_dir) / "manifest.csv");
  std::size_t labeled = 0, unlabeled = 0, validation = 0;
  for (const auto& item : ds.manifest.items()) {
    labeled += item.split == Split::kLabeled;
    unlabeled += item.split == Split::kUnlabeled;
    validation += item.split == Split::kValidation;
  }
  out << "items=" << ds.bank.count() << " dim=" << ds.bank.dim() << " labeled=" << labeled
      << " unlabeled=" << unlabeled << " validation=" << validation
      << " known_classes=" << known_class_count(settings.synthetic) << '\n';
  return kExitOk;
}

int cmd_train(const SettingsArgs& sargs, const DataArgs& dargs, const std::string& out_dir, std::ostream& out,
              std::ostream& err) {
  auto settings = resolve(sargs);
  const auto data = load_data(dargs, err);
  settings.train.head.in_dim = data.base.dim();
  const auto fit = train_model(data.inputs(), settings);

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_head(fit.best_head, dir / "head.cmsh");
  write_text(meta_path(dir / "head.cmsh"), format_key_values(checkpoint_meta(settings, fit)));
  write_text(dir / "train.log", "# " + describe(settings) + "\n" + format_training_log(fit.log));
  out << "best_epoch=" << fit.best_epoch << " estimated_k=" << fit.best_estimated_k
      << " best_val_accuracy=" << fixed(fit.best_val_accuracy) << '\n';
  return kExitOk;
}

int cmd_infer(const SettingsArgs& sargs, const DataArgs& dargs, const std::string& checkpoint,
              const std::string& out_file, std::ostream& out, std::ostream& err) {
  if (!fs::exists(checkpoint)) throw Error(ErrorCode::kIo, "checkpoint not found: " + checkpoint);
  KeyValues meta;
  if (fs::exists(meta_path(checkpoint))) meta = load_key_values(meta_path(checkpoint));
  std::optional<std::size_t> estimated_k;
  if (const auto it = meta.find("estimated-k"); it != meta.end()) estimated_k = std::stoul(it->second);
  for (const auto* key : kMetaOnlyKeys) meta.erase(key);

  auto settings = resolve(sargs, meta);
  const auto head = load_head(checkpoint);
  const auto data = load_data(dargs, err);
  if (!estimated_k && !settings.infer.k_override) {
    throw Error(ErrorCode::kIo, "no estimated K next to the checkpoint; pass --gt-k");
  }
  const auto result = infer_clusters(head, estimated_k.value_or(0), data.inputs(), settings);
  save_assignments(result.clustering, out_file);
  const std::string summary = "k=" + std::to_string(result.k) + "\nmethod=" + std::string(to_string(settings.method)) +
                              "\niterations_used=" + std::to_string(result.iterations_used) +
                              "\nselected_iteration=" + std::to_string(result.selected_iteration) +
                              "\ndegenerate_stop=" + (result.degenerate_stop ? "true" : "false") + "\n";
  write_text(meta_path(out_file), summary);
  if (result.degenerate_stop) err << "warning: mean shift hit a degenerate aggregate; returned best-so-far\n";
  out << summary;
  return kExitOk;
}

int cmd_eval(const std::string& assignments, const std::string& manifest_path, std::ostream& out) {
  const auto pred = load_assignments(assignments);
  const auto manifest = load_manifest(manifest_path);
  const auto report = gcd_accuracy(pred, manifest);
  out << format_report_line(report) << '\n' << format_report_block(report);
  return kExitOk;
}

int cmd_ablate(const SettingsArgs& sargs, const DataArgs& dargs, const std::string& axis,
               const std::vector<std::string>& values, const std::string& out_file, std::ostream& out,
               std::ostream& err) {
  static const std::vector<std::string> kAxes = {"k", "alpha", "lambda", "kernel"};
  if (std::find(kAxes.begin(), kAxes.end(), axis) == kAxes.end()) {
    throw UsageError("unknown axis '" + axis + "' (expected k, alpha, lambda or kernel)");
  }
  const auto settings = resolve(sargs);
  std::vector<RunSettings> points;
  for (const auto& value : values) {
    auto point = settings;
    try {
      apply_setting(point, axis, value);
      point.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    points.push_back(point);
  }
  const auto data = load_data(dargs, err);

  std::ostringstream table;
  table << axis << ",all,old,novel,k,best_epoch,iterations_used\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto result = run_pipeline(data.inputs(), data.manifest, points[i]);
    table << values[i] << ',' << fixed(result.report.all, 3) << ',' << fixed(result.report.old, 3) << ','
          << fixed(result.report.novel, 3) << ',' << result.report.k << ',' << result.fit.best_epoch << ','
          << result.inference.iterations_used << '\n';
  }
  if (!out_file.empty()) write_text(out_file, table.str());
  out << table.str();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive mean-shift learning for generalized category discovery", "cms"};
  app.require_subcommand(1);

  SettingsArgs gen_settings, train_settings, infer_settings, ablate_settings;
  DataArgs train_data, infer_data, ablate_data;
  std::string gen_out, train_out, checkpoint, infer_out, assignments, eval_manifest, axis, ablate_out;
  std::vector<std::string> values;

  auto* gen = app.add_subcommand("generate", "write a synthetic embedding bank and manifest");
  add_settings_options(gen, gen_settings);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train the projection head and estimate K");
  add_settings_options(train, train_settings);
  add_data_options(train, train_data);
  train->add_option("--out", train_out, "output directory for checkpoint and log")->required();

  auto* infer = app.add_subcommand("infer", "cluster the training collection with a trained head");
  add_settings_options(infer, infer_settings);
  add_data_options(infer, infer_data);
  infer->add_option("--checkpoint", checkpoint, "CMSH checkpoint")->required();
  infer->add_option("--out", infer_out, "assignment file to write")->required();

  auto* eval = app.add_subcommand("eval", "score assignments against the full manifest");
  eval->add_option("--assignments", assignments, "assignment file")->required();
  eval->add_option("--manifest", eval_manifest, "manifest with ground truth")->required();

  auto* ablate = app.add_subcommand("ablate", "sweep one axis, running train+infer+eval per value");
  add_settings_options(ablate, ablate_settings);
  add_data_options(ablate, ablate_data);
  ablate->add_option("--axis", axis, "k, alpha, lambda or kernel")->required();
  ablate->add_option("--values", values, "comma separated values")->required()->delimiter(',');
  ablate->add_option("--out", ablate_out, "also write the table here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_settings, gen_out, out);
    if (train->parsed()) return cmd_train(train_settings, train_data, train_out, out, err);
    if (infer->parsed()) return cmd_infer(infer_settings, infer_data, checkpoint, infer_out, out, err);
    if (eval->parsed()) return cmd_eval(assignments, eval_manifest, out);
    return cmd_ablate(ablate_settings, ablate_data, axis, values, ablate_out, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace cms::app
