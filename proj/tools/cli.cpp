#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "tqnet/analysis.hpp"
#include "tqnet/checkpoint.hpp"
#include "tqnet/model_check.hpp"

namespace tqnet::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct KeyBinding {
  KeyInfo info;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename F>
KeyBinding int_key(std::string name, std::string help, F field) {
  return {{name, KeyKind::kInt, std::move(help)},
          [field](RunConfig& c, const nlohmann::json& v) {
            field(c) = v.get<std::remove_cvref_t<decltype(field(c))>>();
          },
          [field](const RunConfig& c) { return json(field(c)); }};
}

template <typename F>
KeyBinding real_key(std::string name, std::string help, F field) {
  return {{name, KeyKind::kReal, std::move(help)},
          [field](RunConfig& c, const nlohmann::json& v) { field(c) = v.get<double>(); },
          [field](const RunConfig& c) { return json(field(c)); }};
}

template <typename F>
KeyBinding bool_key(std::string name, std::string help, F field) {
  return {{name, KeyKind::kBool, std::move(help)},
          [field](RunConfig& c, const nlohmann::json& v) { field(c) = v.get<bool>(); },
          [field](const RunConfig& c) { return json(field(c)); }};
}

template <typename F>
KeyBinding string_key(std::string name, std::string help, F field) {
  return {{name, KeyKind::kString, std::move(help)},
          [field](RunConfig& c, const nlohmann::json& v) { field(c) = v.get<std::string>(); },
          [field](const RunConfig& c) { return json(field(c)); }};
}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = [] {
    std::vector<KeyBinding> b;
    b.push_back(string_key("data", "input CSV (timestamp column then channels)",
                           [](auto& c) -> auto& { return c.data; }));
    b.push_back(string_key("dataset", "name written to results.jsonl (default: file stem)",
                           [](auto& c) -> auto& { return c.dataset; }));
    b.push_back(string_key("out_dir", "directory for checkpoints, tables and results.jsonl",
                           [](auto& c) -> auto& { return c.out_dir; }));
    b.push_back(int_key("max_timesteps", "use only the first rows of the file (0 = all)",
                        [](auto& c) -> auto& { return c.split.max_timesteps; }));
    b.push_back(real_key("split_train", "train ratio",
                         [](auto& c) -> auto& { return c.split.train; }));
    b.push_back(real_key("split_val", "validation ratio",
                         [](auto& c) -> auto& { return c.split.val; }));
    b.push_back(real_key("split_test", "test ratio",
                         [](auto& c) -> auto& { return c.split.test; }));
    b.push_back({{"border", KeyKind::kString, "context | strict"},
                 [](RunConfig& c, const nlohmann::json& v) {
                   const auto s = v.get<std::string>();
                   if (s == "context") {
                     c.split.border = Border::kContext;
                   } else if (s == "strict") {
                     c.split.border = Border::kStrict;
                   } else {
                     throw ConfigError("key 'border': expected 'context' or 'strict', got '" + s + "'");
                   }
                 },
                 [](const RunConfig& c) {
                   return json(c.split.border == Border::kContext ? "context" : "strict");
                 }});
    b.push_back(int_key("lookback", "input length L",
                        [](auto& c) -> auto& { return c.model.lookback; }));
    b.push_back(int_key("horizon", "forecast length H",
                        [](auto& c) -> auto& { return c.model.horizon; }));
    b.push_back(int_key("period", "query bank length W",
                        [](auto& c) -> auto& { return c.model.period; }));
    b.push_back(int_key("d_model", "hidden width d",
                        [](auto& c) -> auto& { return c.model.d_model; }));
    b.push_back(int_key("d_ff", "MLP inner width (0 = d_model)",
                        [](auto& c) -> auto& { return c.model.d_ff; }));
    b.push_back(int_key("heads", "attention heads, must divide lookback",
                        [](auto& c) -> auto& { return c.model.heads; }));
    b.push_back(real_key("attn_dropout", "dropout on attention weights",
                         [](auto& c) -> auto& { return c.model.attn_dropout; }));
    b.push_back(real_key("out_dropout", "dropout before the output projection",
                         [](auto& c) -> auto& { return c.model.out_dropout; }));
    b.push_back(bool_key("instance_norm", "per-window instance normalization",
                         [](auto& c) -> auto& { return c.model.use_instance_norm; }));
    b.push_back(real_key("norm_eps", "instance norm epsilon",
                         [](auto& c) -> auto& { return c.model.norm_eps; }));
    b.push_back(bool_key("scale_by_head_dim", "scale scores by sqrt(L/heads) instead of sqrt(L)",
                         [](auto& c) -> auto& { return c.model.scale_by_head_dim; }));
    b.push_back({{"variant", KeyKind::kString,
                  "default | self_attention | global_only | channel_identifier | pure_mlp"},
                 [](RunConfig& c, const nlohmann::json& v) {
                   c.variant = VariantSpec::from_name(v.get<std::string>());
                 },
                 [](const RunConfig& c) { return json(c.variant.name()); }});
    b.push_back(real_key("lr", "Adam learning rate",
                         [](auto& c) -> auto& { return c.plan.lr; }));
    b.push_back(int_key("max_epochs", "epoch limit",
                        [](auto& c) -> auto& { return c.plan.max_epochs; }));
    b.push_back(int_key("patience", "early-stopping patience in epochs",
                        [](auto& c) -> auto& { return c.plan.patience; }));
    b.push_back(int_key("batch_size", "training mini-batch size",
                        [](auto& c) -> auto& { return c.plan.batch_size; }));
    b.push_back(int_key("eval_batch_size", "windows per evaluation batch",
                        [](auto& c) -> auto& { return c.plan.eval_batch_size; }));
    b.push_back({{"seed", KeyKind::kInt, "seed for initialization, shuffling and dropout"},
                 [](RunConfig& c, const nlohmann::json& v) {
                   c.model.seed = v.get<std::uint64_t>();
                   c.plan.seed = c.model.seed;
                 },
                 [](const RunConfig& c) { return json(c.model.seed); }});
    b.push_back(bool_key("shuffle", "shuffle training windows every epoch",
                         [](auto& c) -> auto& { return c.plan.shuffle; }));
    b.push_back(int_key("target_channel", "score only this channel (-1 = all)",
                        [](auto& c) -> auto& { return c.target_channel; }));
    return b;
  }();
  return table;
}

const KeyBinding* find_binding(const std::string& name) {
  for (const auto& b : bindings()) {
    if (b.info.name == name) return &b;
  }
  return nullptr;
}

void check_type(const KeyBinding& b, const nlohmann::json& v) {
  bool ok = false;
  const char* expected = "";
  switch (b.info.kind) {
    case KeyKind::kInt:
      expected = "an integer";
      ok = v.is_number_integer() &&
           (b.info.name == "target_channel" || v.is_number_unsigned());
      break;
    case KeyKind::kReal:
      expected = "a number";
      ok = v.is_number();
      break;
    case KeyKind::kBool:
      expected = "true or false";
      ok = v.is_boolean();
      break;
    case KeyKind::kString:
      expected = "a string";
      ok = v.is_string();
      break;
  }
  if (!ok) {
    throw ConfigError("key '" + b.info.name + "': expected " + expected + ", got " + v.dump());
  }
}

nlohmann::json parse_override(const KeyBinding& b, const std::string& text) {
  auto fail = [&] {
    throw ConfigError("key '" + b.info.name + "': cannot parse '" + text + "'");
  };
  switch (b.info.kind) {
    case KeyKind::kInt: {
      long long v = 0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size()) fail();
      if (v < 0 && b.info.name != "target_channel") fail();
      return v < 0 ? nlohmann::json(v) : nlohmann::json(static_cast<std::uint64_t>(v));
    }
    case KeyKind::kReal: {
      double v = 0.0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size()) fail();
      return v;
    }
    case KeyKind::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      fail();
      break;
    case KeyKind::kString:
      return text;
  }
  return {};
}

void apply(RunConfig& c, const KeyBinding& b, const nlohmann::json& v) {
  check_type(b, v);
  try {
    b.set(c, v);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("key '" + b.info.name + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Output helpers

void emit_error(std::ostream& err, const std::string& kind, const std::string& message) {
  json j;
  j["error"] = kind;
  j["message"] = message;
  err << j.dump() << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path prepare_out_dir(const RunConfig& c) {
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", c.to_json().dump(2) + "\n");
  return dir;
}

SeriesTable load_data(const RunConfig& c) {
  if (c.data.empty()) throw ConfigError("key 'data': no input file given");
  if (!fs::exists(c.data)) throw ConfigError("key 'data': file '" + c.data + "' does not exist");
  return load_csv(c.data);
}

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw ConfigError("flag '" + flag + "': cannot parse '" + text + "' as a list of integers");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("flag '" + flag + "' needs at least one value");
  return out;
}

MetricsReport make_report(const RunConfig& c, const ModelConfig& m, const VariantSpec& v,
                          const EvalMetrics& e, std::size_t best_epoch, double wall) {
  MetricsReport r;
  r.dataset = c.dataset_name();
  r.lookback = m.lookback;
  r.horizon = m.horizon;
  r.period = m.period;
  r.variant = v.name();
  r.seed = c.model.seed;
  r.mse = e.mse;
  r.mae = e.mae;
  r.best_epoch = best_epoch;
  r.wall_time_s = wall;
  r.config_hash = c.hash();
  return r;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
  RunConfig config;
  std::ostream& out;
  std::ostream& err;
};

int cmd_train(Context& ctx) {
  const RunConfig& c = ctx.config;
  const SeriesTable table = load_data(c);
  const fs::path dir = prepare_out_dir(c);

  std::ofstream history(dir / "history.csv");
  history << "epoch,train_loss,val_mse,val_mae,seconds\n";
  const auto on_epoch = [&](const EpochRecord& e) {
    history << e.epoch << ',' << e.train_loss << ',' << e.val_mse << ',' << e.val_mae << ','
            << e.seconds << '\n';
    ctx.err << "epoch " << e.epoch << " train_loss=" << e.train_loss << " val_mse=" << e.val_mse
            << " val_mae=" << e.val_mae << " (" << e.seconds << " s)" << std::endl;
  };
  const ExperimentResult r = run_experiment(table, c.experiment(), on_epoch);
  save_checkpoint(*r.model, dir / "model.tqnc");

  const MetricsReport report =
      make_report(c, r.model->config(), c.variant, r.test, r.fit.best_epoch, r.wall_time_s);
  append_jsonl(dir / "results.jsonl", report);
  ctx.out << report.to_json() << std::endl;
  return 0;
}

int cmd_evaluate(Context& ctx, const std::string& checkpoint) {
  const RunConfig& c = ctx.config;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path ckpt = checkpoint.empty() ? fs::path(c.out_dir) / "model.tqnc" : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint '" + ckpt.string() + "' does not exist");
  const SeriesTable table = load_data(c);
  const TQNet<float> model = load_checkpoint<float>(ckpt);
  const ModelConfig& m = model.config();
  if (m.channels != table.channels()) {
    throw DimensionError("checkpoint expects " + std::to_string(m.channels) +
                         " channels, data has " + std::to_string(table.channels()));
  }
  const PreparedData data = split_and_scale(table, c.split, m.lookback, m.horizon);
  const WindowSet test = make_windows(data, SplitKind::kTest, m.lookback, m.horizon, m.period);
  std::vector<std::size_t> targets;
  if (c.target_channel >= 0) targets.push_back(static_cast<std::size_t>(c.target_channel));
  const EvalMetrics e = evaluate(model, test, c.plan.eval_batch_size, targets);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.out << make_report(c, m, model.variant(), e, 0, wall).to_json() << std::endl;
  return 0;
}

int cmd_ablate(Context& ctx, const std::string& variant_list, const std::string& covariates) {
  const RunConfig& c = ctx.config;
  const SeriesTable table = load_data(c);
  const fs::path dir = prepare_out_dir(c);
  const ExperimentSpec base = c.experiment();

  if (!covariates.empty()) {
    const auto sizes = parse_list(covariates, "--covariates");
    const std::size_t target = c.target_channel >= 0 ? static_cast<std::size_t>(c.target_channel)
                                                     : table.channels() - 1;
    ExperimentSpec spec = base;
    spec.target_channels.clear();
    const auto rows = covariate_experiment(table, target, sizes, spec);
    std::ofstream csv(dir / "covariates.csv");
    csv << "covariates,mse,mae\n";
    for (const auto& r : rows) {
      csv << r.covariates << ',' << r.mse << ',' << r.mae << '\n';
      ctx.out << "covariates=" << r.covariates << " mse=" << r.mse << " mae=" << r.mae << '\n';
    }
    return 0;
  }

  std::vector<VariantSpec> variants;
  std::stringstream ss(variant_list);
  std::string name;
  while (std::getline(ss, name, ',')) variants.push_back(VariantSpec::from_name(name));
  const auto rows = ablate(table, base, variants);
  std::ofstream csv(dir / "ablation.csv");
  csv << "variant,mse,mae,best_epoch\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv << r.variant << ',' << r.mse << ',' << r.mae << ',' << r.best_epoch << '\n';
    ModelConfig m = c.model;
    append_jsonl(dir / "results.jsonl",
                 make_report(c, m, variants[i], {r.mse, r.mae, 0}, r.best_epoch, 0.0));
    ctx.out << r.variant << " mse=" << r.mse << " mae=" << r.mae << '\n';
  }
  return 0;
}

int cmd_sweep(Context& ctx, const std::string& periods, bool with_disabled) {
  const RunConfig& c = ctx.config;
  const SeriesTable table = load_data(c);
  const fs::path dir = prepare_out_dir(c);
  const auto ws = parse_list(periods, "--periods");
  const auto rows = w_sweep(table, c.experiment(), ws, with_disabled);
  std::ofstream csv(dir / "w_sweep.csv");
  csv << "rank,W,mse,mae,best_epoch\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string w = r.period == 0 ? "none" : std::to_string(r.period);
    csv << i + 1 << ',' << w << ',' << r.mse << ',' << r.mae << ',' << r.best_epoch << '\n';
    ctx.out << "W=" << w << " mse=" << r.mse << " mae=" << r.mae << '\n';
  }
  return 0;
}

int cmd_acf(Context& ctx, std::size_t max_lag) {
  const RunConfig& c = ctx.config;
  const SeriesTable table = load_data(c);
  const SeriesTable used = table.head(c.split.max_timesteps);
  c.split.validate();
  const auto n_train =
      static_cast<std::size_t>(static_cast<double>(used.timesteps()) * c.split.train);
  const AcfResult acf = compute_acf(used.data, 0, n_train, max_lag);

  const fs::path dir = prepare_out_dir(c);
  RealMatrix curves(max_lag + 1, table.channels() + 1);
  std::vector<std::string> header{"mean"};
  for (const auto& n : table.channel_names) header.push_back(n);
  std::vector<std::string> lags;
  for (std::size_t k = 0; k <= max_lag; ++k) {
    lags.push_back(std::to_string(k));
    curves(k, 0) = acf.mean_acf[k];
    for (std::size_t ch = 0; ch < table.channels(); ++ch) curves(k, ch + 1) = acf.per_channel[ch][k];
  }
  write_matrix_csv(dir / "acf.csv", header, curves, lags, "lag");

  json j;
  const auto suggestion = acf.suggest_period();
  j["suggested_period"] = suggestion ? json(*suggestion) : json(nullptr);
  j["candidates"] = acf.candidates;
  j["threshold"] = acf.threshold;
  ctx.out << j.dump() << std::endl;
  return 0;
}

int cmd_corr(Context& ctx, const std::string& checkpoint, const std::string& truth) {
  const RunConfig& c = ctx.config;
  const fs::path dir = prepare_out_dir(c);
  json summary;
  std::optional<CorrMatrix> learned;
  std::vector<std::string> names;

  if (!c.data.empty()) {
    const SeriesTable table = load_data(c);
    const SeriesTable used = table.head(c.split.max_timesteps);
    const auto n_train =
        static_cast<std::size_t>(static_cast<double>(used.timesteps()) * c.split.train);
    RealMatrix train(n_train, used.channels());
    std::copy_n(used.data.data.begin(), n_train * used.channels(), train.data.begin());
    const CorrMatrix data_corr = channel_correlation(train);
    write_corr_csv(dir / "data_corr.csv", data_corr, table.channel_names);
    summary["data_corr"] = (dir / "data_corr.csv").string();
    summary["constant_channels"] = data_corr.constant;
    names = table.channel_names;
  }
  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint '" + checkpoint + "' does not exist");
    const TQNet<float> model = load_checkpoint<float>(checkpoint);
    if (!model.has_tq()) {
      throw ConfigError("checkpoint variant '" + model.variant().name() + "' has no query bank");
    }
    learned = tq_query_correlation(model.tq_bank());
    if (names.size() != model.config().channels) {
      names.clear();
      for (std::size_t i = 0; i < model.config().channels; ++i) names.push_back("ch" + std::to_string(i));
    }
    write_corr_csv(dir / "tq_corr.csv", *learned, names);
    summary["tq_corr"] = (dir / "tq_corr.csv").string();
  }
  if (!truth.empty()) {
    if (!learned) throw ConfigError("--truth needs --checkpoint");
    if (!fs::exists(truth)) throw ConfigError("truth file '" + truth + "' does not exist");
    const SeriesTable gt = load_csv(truth);
    summary["upper_triangle_pearson"] = upper_triangle_pearson(learned->values, gt.data);
  }
  if (summary.empty()) throw ConfigError("corr needs --data and/or --checkpoint");
  ctx.out << summary.dump() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

void add_config_options(CLI::App* app, std::string& config_path,
                        std::map<std::string, std::string>& overrides) {
  app->add_option("--config", config_path, "JSON file of flat config keys");
  for (const auto& b : bindings()) {
    std::string names = "--" + b.info.name;
    std::string dashed = b.info.name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != b.info.name) names += ",--" + dashed;
    app->add_option(names, overrides[b.info.name], b.info.help);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

nlohmann::ordered_json RunConfig::to_json() const {
  json j;
  for (const auto& b : bindings()) j[b.info.name] = b.get(*this);
  return j;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");
  const std::string s = j.dump();
  return hex64(fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()}));
}

std::string RunConfig::dataset_name() const {
  if (!dataset.empty()) return dataset;
  return data.empty() ? "unknown" : fs::path(data).stem().string();
}

ExperimentSpec RunConfig::experiment() const {
  ExperimentSpec s;
  s.model = model;
  s.variant = variant;
  s.plan = plan;
  s.split = split;
  if (target_channel >= 0) s.target_channels.push_back(static_cast<std::size_t>(target_channel));
  return s;
}

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> infos = [] {
    std::vector<KeyInfo> v;
    for (const auto& b : bindings()) v.push_back(b.info);
    return v;
  }();
  return infos;
}

RunConfig parse_config(const std::optional<fs::path>& path,
                       const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + path->string() + "'");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    nlohmann::json j;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
      j = nlohmann::json::object();
    } else {
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path->string() + "' is not valid JSON: " + e.what());
      }
    }
    if (!j.is_object()) throw ConfigError("config file '" + path->string() + "' must hold an object");
    for (const auto& [key, value] : j.items()) {
      const KeyBinding* b = find_binding(key);
      if (!b) throw ConfigError("unknown config key '" + key + "'");
      apply(c, *b, value);
    }
  }
  for (const auto& [key, text] : overrides) {
    const KeyBinding* b = find_binding(key);
    if (!b) throw ConfigError("unknown config key '" + key + "'");
    apply(c, *b, parse_override(*b, text));
  }
  c.split.validate();
  c.model.validate();
  c.variant.validate();
  c.plan.validate();
  return c;
}

int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TQNet multivariate forecasting engine", "tqnet"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::map<std::string, std::string> overrides;
  };
  std::map<std::string, Common> common;
  auto with_config = [&](CLI::App* sub) {
    auto& cm = common[sub->get_name()];
    add_config_options(sub, cm.config, cm.overrides);
    return sub;
  };

  with_config(app.add_subcommand("train", "train one model and test it"));

  std::string checkpoint;
  std::string run_dir;
  auto* evaluate_cmd = with_config(app.add_subcommand("evaluate", "evaluate a checkpoint on the test split"));
  evaluate_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out_dir>/model.tqnc)");
  evaluate_cmd->add_option("--run-dir", run_dir, "directory written by train; its config.json is loaded");

  std::string variant_list = "default,self_attention,global_only,channel_identifier,pure_mlp";
  std::string covariates;
  auto* ablate_cmd = with_config(app.add_subcommand("ablate", "train every variant on the same data"));
  ablate_cmd->add_option("--variants", variant_list, "comma-separated variant names");
  ablate_cmd->add_option("--covariates", covariates,
                         "comma-separated covariate counts; runs the covariate study instead");

  std::string periods = "1,12,23,24,48";
  bool with_disabled = false;
  auto* sweep = with_config(app.add_subcommand("sweep-w", "train one model per query bank length"));
  sweep->add_option("--periods", periods, "comma-separated candidate W values");
  sweep->add_flag("--with-disabled", with_disabled, "add a row with the query bank removed");

  std::size_t max_lag = 200;
  auto* acf_cmd = with_config(app.add_subcommand("acf", "autocorrelation of the train split and a W suggestion"));
  acf_cmd->add_option("--max-lag", max_lag, "largest lag");

  std::string truth;
  auto* corr = with_config(app.add_subcommand("corr", "channel and query bank correlation matrices"));
  corr->add_option("--checkpoint", checkpoint, "trained checkpoint whose query bank is analysed");
  corr->add_option("--truth", truth, "ground-truth correlation CSV to compare against");

  SynthSpec synth_spec;
  std::string synth_out = "synthetic.csv";
  auto* synth = app.add_subcommand("synth", "write a synthetic correlated dataset");
  synth->add_option("--channels", synth_spec.channels, "C");
  synth->add_option("--timesteps", synth_spec.timesteps, "T");
  synth->add_option("--period", synth_spec.period, "true period");
  synth->add_option("--latents", synth_spec.latents, "K latent sinusoids");
  synth->add_option("--noise", synth_spec.noise_sigma, "Gaussian noise sigma");
  synth->add_option("--missing-rate", synth_spec.missing_rate, "fraction of zeroed points");
  synth->add_option("--spike-rate", synth_spec.spike_rate, "fraction of spiked points");
  synth->add_option("--seed", synth_spec.seed, "generator seed");
  synth->add_option("--out", synth_out, "output CSV; <stem>_truth.csv and <stem>_mixing.csv go beside it");

  std::string gc_variant = "default";
  std::uint64_t gc_seed = 7;
  double gc_eps = 1e-6;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the tiny model in 64-bit");
  gradcheck->add_option("--variant", gc_variant, "variant name");
  gradcheck->add_option("--seed", gc_seed, "seed for parameters and inputs");
  gradcheck->add_option("--eps", gc_eps, "central-difference step");
  gradcheck->add_option("--tol", gc_tol, "maximum relative error");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (name == "synth") {
      const SynthResult r = generate_synthetic(synth_spec);
      const fs::path path(synth_out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      save_csv(r.table, path);
      const fs::path stem = path.parent_path() / path.stem();
      write_corr_csv(stem.string() + "_truth.csv", {r.ground_truth_corr, {}}, r.table.channel_names);
      std::vector<std::string> latent_names;
      for (std::size_t k = 0; k < r.mixing.cols; ++k) latent_names.push_back("z" + std::to_string(k));
      write_matrix_csv(stem.string() + "_mixing.csv", latent_names, r.mixing, r.table.channel_names,
                       "channel");
      json j;
      j["data"] = path.string();
      j["channels"] = r.table.channels();
      j["timesteps"] = r.table.timesteps();
      out << j.dump() << std::endl;
      return 0;
    }
    if (name == "gradcheck") {
      const GradientCheckReport r = model_gradient_check(
          tiny_gradcheck_config(), VariantSpec::from_name(gc_variant), 3, gc_seed, gc_eps, gc_tol);
      for (const auto& g : r.groups) {
        out << g.name << " elements=" << g.elements << " max_rel_error=" << g.max_rel_error
            << (g.frozen ? " frozen" : "") << '\n';
      }
      json j;
      j["max_rel_error"] = r.max_rel_error;
      j["tolerance"] = r.tolerance;
      j["passed"] = r.passed;
      out << j.dump() << std::endl;
      return r.passed ? 0 : 1;
    }

    Common& cm = common[name];
    std::map<std::string, std::string> overrides;
    for (const auto& b : bindings()) {
      if (sub->count("--" + b.info.name) > 0) overrides[b.info.name] = cm.overrides[b.info.name];
    }
    std::optional<fs::path> config_path;
    if (!cm.config.empty()) config_path = cm.config;
    if (name == "evaluate" && !run_dir.empty()) {
      if (config_path) throw ConfigError("--run-dir and --config are mutually exclusive");
      config_path = fs::path(run_dir) / "config.json";
      if (checkpoint.empty()) checkpoint = (fs::path(run_dir) / "model.tqnc").string();
    }
    Context ctx{parse_config(config_path, overrides), out, err};

    if (name == "train") return cmd_train(ctx);
    if (name == "evaluate") return cmd_evaluate(ctx, checkpoint);
    if (name == "ablate") return cmd_ablate(ctx, variant_list, covariates);
    if (name == "sweep-w") return cmd_sweep(ctx, periods, with_disabled);
    if (name == "acf") return cmd_acf(ctx, max_lag);
    if (name == "corr") return cmd_corr(ctx, checkpoint, truth);
    emit_error(err, "usage", "unknown subcommand " + name);
    return 2;
  } catch (const ConfigError& e) {
    emit_error(err, e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    emit_error(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error(err, "runtime", e.what());
    return 1;
  }
}

}  // namespace tqnet::cli
