#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <type_traits>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbr/archive.hpp"
#include "sbr/coarse.hpp"
#include "sbr/errors.hpp"
#include "sbr/generator.hpp"
#include "sbr/metrics.hpp"
#include "sbr/refiner.hpp"
#include "sbr/scenario.hpp"
#include "sbr/training.hpp"

namespace sbr::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kDefaultMix = "crossing,yielding,merging,lane_follow,platoon";

template <typename T>
T ParseNumber(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  }
  return value;
}

bool ParseBool(const std::string& key, const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "on" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "off" || t == "no" || t == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

std::vector<std::string> SplitList(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Key-value settings shared by the config file and the command-line flags.
// Precedence: defaults < config file < flags.
class Settings {
 public:
  template <typename T>
  void Bind(const std::string& key, T* target, const std::string& help) {
    Add(
        key, help,
        [key, target](const std::string& text) {
          if constexpr (std::is_same_v<T, bool>) {
            *target = ParseBool(key, text);
          } else if constexpr (std::is_same_v<T, std::string>) {
            *target = text;
          } else {
            *target = ParseNumber<T>(key, text);
          }
        },
        [target] { return json(*target).dump(); });
  }

  void Add(const std::string& key, const std::string& help,
           std::function<void(const std::string&)> set, std::function<std::string()> show) {
    entries_.push_back({key, help, std::move(set), std::move(show), false});
  }

  void Apply(const std::string& key, const std::string& value) {
    Entry* e = Find(key);
    if (e == nullptr) throw ConfigError("unknown key '" + key + "'");
    e->set(value);
    e->is_set = true;
  }

  bool IsSet(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.key == key) return e.is_set;
    }
    return false;
  }

  // INI/TOML key = value file. Section headers are allowed for grouping and
  // do not change key names.
  void LoadFile(const fs::path& path) {
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_file(path.string());
    } catch (const CLI::Error& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;  // section markers
      std::string key = item.name;
      std::replace(key.begin(), key.end(), '-', '_');
      std::string value;
      for (size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
      try {
        Apply(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
      }
    }
  }

  void RegisterFlags(CLI::App* app) {
    for (auto& e : entries_) {
      std::string flag = e.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      flag_text_.emplace_back();
      CLI::Option* opt = app->add_option("--" + flag, flag_text_.back(), e.help);
      flags_.push_back({opt, &flag_text_.back(), e.key});
    }
  }

  void ApplyFlags() {
    for (const auto& f : flags_) {
      if (f.option->count() > 0) Apply(f.key, *f.text);
    }
  }

  std::string Ini() const {
    std::string out;
    for (const auto& e : entries_) out += e.key + " = " + e.show() + "\n";
    return out;
  }

 private:
  struct Entry {
    std::string key, help;
    std::function<void(const std::string&)> set;
    std::function<std::string()> show;
    bool is_set;
  };
  struct Flag {
    CLI::Option* option;
    const std::string* text;
    std::string key;
  };

  Entry* Find(const std::string& key) {
    for (auto& e : entries_) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }

  std::vector<Entry> entries_;
  std::deque<std::string> flag_text_;
  std::vector<Flag> flags_;
};

void BindRefiner(Settings& s, RefinerConfig* c) {
  s.Bind("iterations", &c->iterations, "refinement iterations I");
  s.Bind("tau_a", &c->tau_a, "agent neighborhood radius (m)");
  s.Bind("tau_l", &c->tau_l, "lane neighborhood radius (m)");
  s.Bind("dim", &c->dim, "embedding width D");
  s.Bind("heads", &c->heads, "attention heads");
  s.Add(
      "topology_mode", "soft_braid | braid | none",
      [c](const std::string& v) { c->topology_mode = ParseTopologyMode(v); },
      [c] { return json(std::string(TopologyModeName(c->topology_mode))).dump(); });
  s.Bind("topology_update", &c->topology_update, "recompute topology every iteration");
  s.Bind("lane_points", &c->lane_points, "lane points per key");
  s.Bind("residual_norm", &c->residual_norm, "residual + layer norm around attention");
  s.Bind("phi_norm", &c->phi_norm, "layer norm on the phi encodings");
  s.Add(
      "encoding", "sinusoidal | raw",
      [c](const std::string& v) { c->encoding = ParsePositionalEncoding(v); },
      [c] { return json(std::string(PositionalEncodingName(c->encoding))).dump(); });
  s.Bind("braid_epsilon", &c->braid_epsilon, "distance threshold of the braid mode (m)");
}

void BindTrain(Settings& s, TrainConfig* c) {
  s.Bind("epochs", &c->epochs, "training epochs");
  s.Bind("batch_size", &c->batch_size, "scenarios per step");
  s.Bind("learning_rate", &c->learning_rate, "peak learning rate");
  s.Bind("weight_decay", &c->weight_decay, "decoupled weight decay");
  s.Bind("beta1", &c->beta1, "first-moment decay");
  s.Bind("beta2", &c->beta2, "second-moment decay");
  s.Bind("adam_eps", &c->adam_eps, "moment denominator epsilon");
  s.Bind("huber_delta", &c->huber_delta, "Huber transition (m)");
  s.Bind("grad_clip", &c->grad_clip, "global gradient norm clip, 0 = off");
}

// Output directory that records every file it hands out.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    if (dir.empty()) throw UsageError("--out is required");
    fs::create_directories(dir_);
  }

  fs::path File(const std::string& name) {
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    return dir_ / name;
  }

  void WriteText(const std::string& name, const std::string& text) {
    std::ofstream out(File(name), std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("failed writing " + (dir_ / name).string());
  }

  void Finish(const std::string& command) {
    json files = json::array();
    for (const auto& name : files_) {
      files.push_back({{"name", name}, {"bytes", fs::file_size(dir_ / name)}});
    }
    std::ofstream out(dir_ / "manifest.json", std::ios::binary | std::ios::trunc);
    out << json{{"command", command}, {"files", files}}.dump(2) << "\n";
    if (!out) throw Error("failed writing manifest in " + dir_.string());
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  Settings settings;
  std::string config_file;
  bool uses_seed = false;
  std::function<void(Command&, std::ostream&)> run;
};

void Require(const std::string& value, const std::string& key) {
  if (value.empty()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    throw UsageError("--" + flag + " is required");
  }
}

void Echo(Command& cmd, std::ostream& out, OutputDir* dir) {
  const std::string ini = "# sbr " + cmd.name + "\n" + cmd.settings.Ini();
  out << ini;
  if (dir != nullptr) dir->WriteText("config.ini", ini);
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  size_t count = 1000;
  uint64_t seed = 0;
  std::string archetypes = kDefaultMix;
  GeneratorDims dims;
  size_t threads = 1;
  std::string out;
};

void AddGenerate(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<GenerateArgs>();
  cmd->name = "generate";
  cmd->app = app.add_subcommand("generate", "generate synthetic scenarios");
  cmd->uses_seed = true;
  Settings& s = cmd->settings;
  s.Bind("count", &args->count, "number of scenarios");
  s.Bind("seed", &args->seed, "generator seed (falls back to SBR_SEED)");
  s.Bind("archetypes", &args->archetypes, "comma-separated archetype mix");
  s.Bind("min_agents", &args->dims.min_agents, "fewest agents per scenario");
  s.Bind("max_agents", &args->dims.max_agents, "most agents per scenario");
  s.Bind("history_len", &args->dims.history_len, "history samples T-");
  s.Bind("future_len", &args->dims.future_len, "future samples T+");
  s.Bind("sample_rate", &args->dims.sample_rate, "samples per second");
  s.Bind("threads", &args->threads, "worker threads");
  s.Bind("out", &args->out, "output directory");
  cmd->run = [args](Command& c, std::ostream& out) {
    OutputDir dir(args->out);
    Echo(c, out, &dir);
    const auto scenarios = GenerateScenarios(ParseArchetypeList(args->archetypes), args->count,
                                             args->seed, args->dims, args->threads);
    WriteScenarios(dir.File("scenarios.jsonl"), scenarios);
    dir.Finish(c.name);
    out << "wrote " << scenarios.size() << " scenarios to " << (dir.path() / "scenarios.jsonl").string()
        << "\n";
  };
  cmds.push_back(std::move(cmd));
}

// ---- predict-coarse --------------------------------------------------------

struct CoarseArgs {
  std::string scenarios;
  CoarseConfig coarse;
  size_t threads = 1;
  std::string out;
};

void AddPredictCoarse(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<CoarseArgs>();
  cmd->name = "predict-coarse";
  cmd->app = app.add_subcommand("predict-coarse", "run the constant-velocity coarse predictor");
  cmd->uses_seed = true;
  Settings& s = cmd->settings;
  s.Bind("scenarios", &args->scenarios, "scenario file");
  s.Bind("k", &args->coarse.modes, "modes K");
  s.Bind("seed", &args->coarse.seed, "noise seed (falls back to SBR_SEED)");
  s.Bind("speed_scale", &args->coarse.speed_scale, "fractional speed perturbation");
  s.Bind("heading_deg", &args->coarse.heading_deg, "heading perturbation (deg)");
  s.Bind("noise_sigma", &args->coarse.noise_sigma, "per-coordinate noise (m)");
  s.Bind("threads", &args->threads, "worker threads");
  s.Bind("out", &args->out, "output directory");
  cmd->run = [args](Command& c, std::ostream& out) {
    Require(args->scenarios, "scenarios");
    OutputDir dir(args->out);
    Echo(c, out, &dir);
    const auto scenarios = ReadScenarios(args->scenarios);
    const auto modes = CoarsePredictAll(scenarios, args->coarse, args->threads);
    WriteModes(dir.File("coarse.jsonl"), modes);
    dir.Finish(c.name);
    out << "wrote " << modes.size() << " mode sets to " << (dir.path() / "coarse.jsonl").string() << "\n";
  };
  cmds.push_back(std::move(cmd));
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string scenarios, coarse, val_scenarios, val_coarse, out;
  RefinerConfig refiner;
  TrainConfig train;
};

size_t FutureLength(const std::vector<Scenario>& scenarios, const std::string& path) {
  if (scenarios.empty()) throw ValidationError(path + ": no scenarios");
  return scenarios.front().future_len;
}

void AddTrain(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<TrainArgs>();
  cmd->name = "train";
  cmd->app = app.add_subcommand("train", "train the refiner");
  cmd->uses_seed = true;
  Settings& s = cmd->settings;
  s.Bind("scenarios", &args->scenarios, "training scenario file");
  s.Bind("coarse", &args->coarse, "training coarse mode file");
  s.Bind("val_scenarios", &args->val_scenarios, "validation scenario file (optional)");
  s.Bind("val_coarse", &args->val_coarse, "validation coarse mode file (optional)");
  BindRefiner(s, &args->refiner);
  BindTrain(s, &args->train);
  s.Bind("seed", &args->train.seed, "init and shuffle seed (falls back to SBR_SEED)");
  s.Bind("threads", &args->train.threads, "worker threads");
  s.Bind("out", &args->out, "output directory");
  cmd->run = [args](Command& c, std::ostream& out) {
    Require(args->scenarios, "scenarios");
    Require(args->coarse, "coarse");
    if (args->val_scenarios.empty() != args->val_coarse.empty()) {
      throw UsageError("--val-scenarios and --val-coarse go together");
    }
    OutputDir dir(args->out);
    Echo(c, out, &dir);
    const auto scenarios = ReadScenarios(args->scenarios);
    const auto coarse = ReadModes(args->coarse);
    RefinerConfig rc = args->refiner;
    rc.future_len = FutureLength(scenarios, args->scenarios);
    Validate(rc);
    Validate(args->train);
    const size_t threads = args->train.threads;
    const TrainingSet train = PrepareTrainingSet(scenarios, coarse, rc, threads);
    std::vector<Scenario> val_scenarios;
    std::vector<ModeRecord> val_coarse;
    TrainingSet validation;
    if (!args->val_scenarios.empty()) {
      val_scenarios = ReadScenarios(args->val_scenarios);
      val_coarse = ReadModes(args->val_coarse);
      validation = PrepareTrainingSet(val_scenarios, val_coarse, rc, threads);
    }

    Refiner refiner(rc, {args->train.seed, true});
    std::ofstream log(dir.File("train_log.jsonl"), std::ios::binary | std::ios::trunc);
    const TrainResult result = Train(
        refiner, train, args->val_scenarios.empty() ? nullptr : &validation, args->train,
        [&](const json& record) {
          log << record.dump() << "\n";
          log.flush();
          out << "epoch " << record["epoch"] << " loss " << record["train_loss"].get<double>();
          if (!record["val_metrics"].is_null()) {
            out << " val avgMinFDE " << record["val_metrics"]["avgMinFDE"].get<double>();
          }
          out << "\n";
        });
    log.close();
    ParameterArchive archive = refiner.ToArchive();
    archive.metadata["train"] = ToJson(args->train);
    result.optimizer.AppendTo(archive, refiner.params());
    archive.Save(dir.File("checkpoint.sbr"));
    dir.Finish(c.name);
    out << "wrote checkpoint to " << (dir.path() / "checkpoint.sbr").string() << "\n";
  };
  cmds.push_back(std::move(cmd));
}

// ---- init-checkpoint -------------------------------------------------------

struct InitArgs {
  RefinerConfig refiner;
  uint64_t seed = 0;
  bool zero_head = true;
  std::string out;
};

void AddInitCheckpoint(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<InitArgs>();
  cmd->name = "init-checkpoint";
  cmd->app = app.add_subcommand("init-checkpoint", "write an untrained checkpoint");
  cmd->uses_seed = true;
  Settings& s = cmd->settings;
  BindRefiner(s, &args->refiner);
  s.Bind("future_len", &args->refiner.future_len, "future samples T+");
  s.Bind("seed", &args->seed, "init seed (falls back to SBR_SEED)");
  s.Bind("zero_head", &args->zero_head, "zero the last head layer (refine is the identity)");
  s.Bind("out", &args->out, "output directory");
  cmd->run = [args](Command& c, std::ostream& out) {
    Validate(args->refiner);
    OutputDir dir(args->out);
    Echo(c, out, &dir);
    const Refiner refiner(args->refiner, {args->seed, args->zero_head});
    refiner.ToArchive().Save(dir.File("checkpoint.sbr"));
    dir.Finish(c.name);
    out << "wrote checkpoint to " << (dir.path() / "checkpoint.sbr").string() << "\n";
  };
  cmds.push_back(std::move(cmd));
}

// ---- refine ----------------------------------------------------------------

struct RefineArgs {
  std::string scenarios, coarse, checkpoint, out;
  size_t threads = 1;
};

void AddRefine(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<RefineArgs>();
  cmd->name = "refine";
  cmd->app = app.add_subcommand("refine", "refine coarse modes with a checkpoint");
  Settings& s = cmd->settings;
  s.Bind("scenarios", &args->scenarios, "scenario file");
  s.Bind("coarse", &args->coarse, "coarse mode file");
  s.Bind("checkpoint", &args->checkpoint, "checkpoint file");
  s.Bind("threads", &args->threads, "worker threads");
  s.Bind("out", &args->out, "output directory");
  cmd->run = [args](Command& c, std::ostream& out) {
    Require(args->scenarios, "scenarios");
    Require(args->coarse, "coarse");
    Require(args->checkpoint, "checkpoint");
    OutputDir dir(args->out);
    Echo(c, out, &dir);
    const Refiner refiner = Refiner::FromArchive(ParameterArchive::Load(args->checkpoint));
    const auto scenarios = ReadScenarios(args->scenarios);
    const auto coarse = ReadModes(args->coarse);
    const TrainingSet set = PrepareTrainingSet(scenarios, coarse, refiner.config(), args->threads);
    const auto refined = RefineAll(refiner, set, args->threads);
    WriteModes(dir.File("refined.jsonl"), refined);
    dir.Finish(c.name);
    out << "wrote " << refined.size() << " mode sets to " << (dir.path() / "refined.jsonl").string() << "\n";
  };
  cmds.push_back(std::move(cmd));
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string scenarios, modes, report;
  size_t threads = 1;
};

void AddEval(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<EvalArgs>();
  cmd->name = "eval";
  cmd->app = app.add_subcommand("eval", "score mode sets against ground truth");
  Settings& s = cmd->settings;
  s.Bind("scenarios", &args->scenarios, "scenario file");
  s.Bind("modes", &args->modes, "mode file to score");
  s.Bind("report", &args->report, "report path (.json, or .csv for one summary row)");
  s.Bind("threads", &args->threads, "worker threads");
  cmd->run = [args](Command& c, std::ostream& out) {
    Require(args->scenarios, "scenarios");
    Require(args->modes, "modes");
    Require(args->report, "report");
    Echo(c, out, nullptr);
    const auto scenarios = ReadScenarios(args->scenarios);
    const auto modes = ReadModes(args->modes);
    const MetricReport report = EvaluateDataset(scenarios, modes, args->threads);
    const fs::path path(args->report);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (path.extension() == ".csv") {
      file << kReportCsvHeader << "\n" << ReportCsvRow(report) << "\n";
    } else {
      file << ReportJson(report) << "\n";
    }
    if (!file) throw Error("failed writing " + path.string());
    out << kReportCsvHeader << "\n" << ReportCsvRow(report) << "\n";
  };
  cmds.push_back(std::move(cmd));
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string axis, values, seeds;
  std::string scenarios, coarse, test_scenarios, test_coarse, out;
  RefinerConfig refiner;
  TrainConfig train;
};

std::string AxisPreset(const std::string& axis) {
  if (axis == "topology_mode") return "soft_braid,braid,none";
  if (axis == "topology_update") return "true,false";
  if (axis == "tau_a") return "10,30,50,100";
  if (axis == "tau_l") return "2,5,10,20";
  if (axis == "iterations") return "1,2,3,4,5";
  throw UsageError("--axis must be one of topology_mode, topology_update, tau_a, tau_l, "
                   "iterations; got '" + axis + "'");
}

MetricReport MeanReport(const std::vector<MetricReport>& runs) {
  MetricReport mean;
  for (const auto& r : runs) {
    mean.avg_min_fde += r.avg_min_fde;
    mean.avg_min_ade += r.avg_min_ade;
    mean.actor_mr += r.actor_mr;
    mean.min_joint_mr += r.min_joint_mr;
  }
  const double n = static_cast<double>(runs.size());
  mean.avg_min_fde /= n;
  mean.avg_min_ade /= n;
  mean.actor_mr /= n;
  mean.min_joint_mr /= n;
  return mean;
}

void AddAblate(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds) {
  auto cmd = std::make_unique<Command>();
  auto args = std::make_shared<AblateArgs>();
  cmd->name = "ablate";
  cmd->app = app.add_subcommand("ablate", "train and evaluate one run per axis value");
  cmd->uses_seed = true;
  Settings& s = cmd->settings;
  s.Bind("axis", &args->axis, "topology_mode | topology_update | tau_a | tau_l | iterations");
  s.Bind("values", &args->values, "comma-separated values (default: the axis preset)");
  s.Bind("seeds", &args->seeds, "comma-separated seeds averaged per value (default: seed)");
  s.Bind("scenarios", &args->scenarios, "training scenario file");
  s.Bind("coarse", &args->coarse, "training coarse mode file");
  s.Bind("test_scenarios", &args->test_scenarios, "test scenario file");
  s.Bind("test_coarse", &args->test_coarse, "test coarse mode file");
  BindRefiner(s, &args->refiner);
  BindTrain(s, &args->train);
  s.Bind("seed", &args->train.seed, "seed when --seeds is empty (falls back to SBR_SEED)");
  s.Bind("threads", &args->train.threads, "worker threads");
  s.Bind("out", &args->out, "output directory");
  Settings* settings = &cmd->settings;
  cmd->run = [args, settings](Command& c, std::ostream& out) {
    Require(args->axis, "axis");
    Require(args->scenarios, "scenarios");
    Require(args->coarse, "coarse");
    Require(args->test_scenarios, "test_scenarios");
    Require(args->test_coarse, "test_coarse");
    const std::string preset = AxisPreset(args->axis);
    if (args->values.empty()) args->values = preset;
    if (args->seeds.empty()) args->seeds = std::to_string(args->train.seed);
    const auto values = SplitList(args->values);
    std::vector<uint64_t> seeds;
    for (const auto& text : SplitList(args->seeds)) seeds.push_back(ParseNumber<uint64_t>("seeds", text));
    if (values.empty()) throw UsageError("--values is empty");
    if (seeds.empty()) throw UsageError("--seeds is empty");

    OutputDir dir(args->out);
    Echo(c, out, &dir);
    const auto scenarios = ReadScenarios(args->scenarios);
    const auto coarse = ReadModes(args->coarse);
    const auto test_scenarios = ReadScenarios(args->test_scenarios);
    const auto test_coarse = ReadModes(args->test_coarse);
    const size_t future_len = FutureLength(scenarios, args->scenarios);
    const size_t threads = args->train.threads;

    std::string table = std::string("value,") + kReportCsvHeader + "\n";
    std::string runs = std::string("value,seed,") + kReportCsvHeader + "\n";
    const RefinerConfig base = args->refiner;
    for (const auto& value : values) {
      args->refiner = base;
      settings->Apply(args->axis, value);
      RefinerConfig rc = args->refiner;
      rc.future_len = future_len;
      Validate(rc);
      const TrainingSet train = PrepareTrainingSet(scenarios, coarse, rc, threads);
      const TrainingSet test = PrepareTrainingSet(test_scenarios, test_coarse, rc, threads);
      std::vector<MetricReport> reports;
      for (const uint64_t seed : seeds) {
        TrainConfig tc = args->train;
        tc.seed = seed;
        Refiner refiner(rc, {seed, true});
        Train(refiner, train, nullptr, tc);
        reports.push_back(EvaluateRefiner(refiner, test, threads));
        runs += value + "," + std::to_string(seed) + "," + ReportCsvRow(reports.back()) + "\n";
        out << args->axis << "=" << value << " seed " << seed << ": "
            << ReportCsvRow(reports.back()) << "\n";
      }
      table += value + "," + ReportCsvRow(MeanReport(reports)) + "\n";
    }
    args->refiner = base;
    dir.WriteText("ablation.csv", table);
    dir.WriteText("ablation_runs.csv", runs);
    dir.Finish(c.name);
    out << table;
  };
  cmds.push_back(std::move(cmd));
}

int Execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"soft-braid trajectory refinement", "sbr"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> cmds;
  AddGenerate(app, cmds);
  AddPredictCoarse(app, cmds);
  AddTrain(app, cmds);
  AddInitCheckpoint(app, cmds);
  AddRefine(app, cmds);
  AddEval(app, cmds);
  AddAblate(app, cmds);
  for (auto& cmd : cmds) {
    cmd->app->add_option("--config", cmd->config_file, "INI/TOML file of key = value settings");
    cmd->settings.RegisterFlags(cmd->app);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  for (auto& cmd : cmds) {
    if (!cmd->app->parsed()) continue;
    if (!cmd->config_file.empty()) cmd->settings.LoadFile(cmd->config_file);
    cmd->settings.ApplyFlags();
    if (cmd->uses_seed && !cmd->settings.IsSet("seed")) {
      if (const char* env = std::getenv("SBR_SEED"); env != nullptr && *env != '\0') {
        try {
          cmd->settings.Apply("seed", env);
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("SBR_SEED: ") + e.what());
        }
      }
    }
    cmd->run(*cmd, out);
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return Execute(args, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const InvalidInputError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ShapeError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace sbr::cli
