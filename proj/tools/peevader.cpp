#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "peevader/bandit.hpp"
#include "peevader/campaign.hpp"
#include "peevader/content_bank.hpp"
#include "peevader/corpusgen.hpp"
#include "peevader/oracle.hpp"
#include "peevader/pe_model.hpp"
#include "peevader/transforms.hpp"

namespace {

constexpr const char* kVersion = "1.0.0";

int g_log_level = 1; // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
  if (g_log_level >= 1) std::cerr << msg << "\n";
}

pev::Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw pev::Error("cannot read " + p.string());
  return pev::Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<pev::ActionKind> parse_actions(const std::string& csv) {
  std::vector<pev::ActionKind> kinds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto kind = pev::action_kind_from_string(item);
    if (!kind) throw CLI::ValidationError("--actions", "unknown action: " + item);
    if (std::find(kinds.begin(), kinds.end(), *kind) == kinds.end()) kinds.push_back(*kind);
  }
  if (kinds.empty()) throw CLI::ValidationError("--actions", "no actions given");
  return kinds;
}

// flat `key = value` config file; '#' starts a comment
std::map<std::string, std::string> load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw pev::Error("cannot read config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw pev::Error("config line " + std::to_string(lineno) + " is not `key = value`");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw pev::Error("empty key on config line " + std::to_string(lineno));
    kv[key] = value;
  }
  return kv;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw pev::Error("config key " + key + " is not a boolean: " + v);
}

// Options shared by every command that talks to a classifier.
struct OracleArgs {
  std::string oracle = "builtin";
  double threshold = 0.5;
  double timeout = 10.0;
  bool no_cache = false;
  int max_inflight = 4;

  void attach(CLI::App* cmd) {
    cmd->add_option("--oracle", oracle, "builtin | cmd:<command> | http://host:port/path");
    cmd->add_option("--threshold", threshold, "detection threshold (default 0.5)");
    cmd->add_option("--timeout", timeout, "backend timeout in seconds");
    cmd->add_flag("--no-cache", no_cache, "disable the score memo cache");
    cmd->add_option("--max-inflight", max_inflight, "max concurrent backend requests");
  }

  pev::OracleConfig config() const {
    pev::OracleConfig cfg = pev::OracleConfig::parse(oracle);
    cfg.threshold = threshold;
    cfg.timeout_s = timeout;
    cfg.cache = !no_cache;
    cfg.max_inflight = max_inflight;
    return cfg;
  }
};

struct AttackArgs {
  std::string dataset;
  std::string output;
  std::string bank;
  std::string sampler = "thompson";
  std::string actions =
      "editdos,extenddos,sectionappend,sectionadd,sectionrename,padding,coderandomize";
  int max_iterations = 20;
  int max_actions_per_iteration = 1;
  std::uint64_t seed = 0;
  int workers = 1;
  bool fresh_bandit = false;
  bool fractional_rewards = false;
  double ucb_c = 2.0;
  double prior_alpha = 1.0;
  double prior_beta = 1.0;
  int rounds = 1;
  std::string config_file;
  std::string log_level = "info";
  OracleArgs oracle;

  CLI::App* cmd = nullptr;

  void attach(CLI::App* c, bool with_rounds) {
    cmd = c;
    cmd->add_option("dataset", dataset, "directory of PE samples");
    cmd->add_option("-o,--output", output, "output directory")->required();
    cmd->add_option("--bank", bank, "goodware content bank (bank.bin)");
    cmd->add_option("--sampler", sampler, "thompson | ucb1");
    cmd->add_option("--actions", actions, "comma-separated action kinds");
    cmd->add_option("--max-iterations", max_iterations, "attack budget per sample (default 20)");
    cmd->add_option("--max-actions-per-iteration", max_actions_per_iteration,
                    "actions applied per iteration; 0 = one per arm");
    cmd->add_option("--seed", seed, "campaign seed");
    cmd->add_option("--workers", workers, "worker threads (1 = fully deterministic)");
    cmd->add_flag("--fresh-bandit", fresh_bandit, "reset bandit state per sample");
    cmd->add_flag("--fractional-rewards", fractional_rewards,
                  "reward surviving arms by score drop instead of 1");
    cmd->add_option("--ucb-c", ucb_c, "UCB1 exploration constant");
    cmd->add_option("--prior-alpha", prior_alpha, "Thompson Beta prior alpha");
    cmd->add_option("--prior-beta", prior_beta, "Thompson Beta prior beta");
    if (with_rounds) cmd->add_option("--rounds", rounds, "dataset passes per sampler");
    cmd->add_option("--config", config_file, "flat key = value config file");
    cmd->add_option("--log-level", log_level, "quiet | info | debug");
    oracle.attach(cmd);
  }

  // config file values fill in everything the command line left untouched
  void merge_config() {
    if (config_file.empty()) return;
    const auto kv = load_config(config_file);
    auto given = [this](const char* flag) { return cmd->count(flag) > 0; };
    for (const auto& [key, value] : kv) {
      if (key == "dataset") {
        if (dataset.empty()) dataset = value;
      } else if (key == "output") {
        if (!given("--output")) output = value;
      } else if (key == "bank") {
        if (!given("--bank")) bank = value;
      } else if (key == "sampler") {
        if (!given("--sampler")) sampler = value;
      } else if (key == "actions") {
        if (!given("--actions")) actions = value;
      } else if (key == "max_iterations") {
        if (!given("--max-iterations")) max_iterations = std::stoi(value);
      } else if (key == "max_actions_per_iteration") {
        if (!given("--max-actions-per-iteration")) max_actions_per_iteration = std::stoi(value);
      } else if (key == "seed") {
        if (!given("--seed")) seed = std::stoull(value);
      } else if (key == "workers") {
        if (!given("--workers")) workers = std::stoi(value);
      } else if (key == "fresh_bandit") {
        if (!given("--fresh-bandit")) fresh_bandit = parse_bool(value, key);
      } else if (key == "fractional_rewards") {
        if (!given("--fractional-rewards")) fractional_rewards = parse_bool(value, key);
      } else if (key == "ucb_c") {
        if (!given("--ucb-c")) ucb_c = std::stod(value);
      } else if (key == "prior_alpha") {
        if (!given("--prior-alpha")) prior_alpha = std::stod(value);
      } else if (key == "prior_beta") {
        if (!given("--prior-beta")) prior_beta = std::stod(value);
      } else if (key == "rounds") {
        if (!given("--rounds")) rounds = std::stoi(value);
      } else if (key == "oracle") {
        if (!given("--oracle")) oracle.oracle = value;
      } else if (key == "threshold") {
        if (!given("--threshold")) oracle.threshold = std::stod(value);
      } else if (key == "timeout") {
        if (!given("--timeout")) oracle.timeout = std::stod(value);
      } else if (key == "cache") {
        if (!given("--no-cache")) oracle.no_cache = !parse_bool(value, key);
      } else if (key == "max_inflight") {
        if (!given("--max-inflight")) oracle.max_inflight = std::stoi(value);
      } else if (key == "log_level") {
        if (!given("--log-level")) log_level = value;
      } else {
        throw pev::Error("unknown config key: " + key);
      }
    }
  }

  pev::CampaignConfig campaign_config() const {
    if (dataset.empty()) throw CLI::ValidationError("dataset", "no dataset directory given");
    pev::CampaignConfig cfg;
    cfg.dataset_dir = dataset;
    if (!bank.empty()) cfg.bank_path = bank;
    cfg.oracle = oracle.config();
    const auto s = pev::sampler_from_string(sampler);
    if (!s) throw CLI::ValidationError("--sampler", "unknown sampler: " + sampler);
    cfg.sampler = *s;
    cfg.actions_enabled = parse_actions(actions);
    if (max_iterations < 1)
      throw CLI::ValidationError("--max-iterations", "must be >= 1");
    cfg.max_iterations = max_iterations;
    cfg.max_actions_per_iteration = max_actions_per_iteration;
    cfg.seed = seed;
    cfg.workers = workers;
    cfg.fresh_bandit = fresh_bandit;
    cfg.fractional_rewards = fractional_rewards;
    cfg.ucb_c = ucb_c;
    cfg.prior_alpha = prior_alpha;
    cfg.prior_beta = prior_beta;
    cfg.output_dir = output;
    return cfg;
  }

  void apply_log_level() {
    if (log_level == "quiet")
      g_log_level = 0;
    else if (log_level == "debug")
      g_log_level = 2;
    else
      g_log_level = 1;
  }
};

int cmd_pe_inspect(const std::string& file) {
  const pev::PeImage img = pev::parse_pe(read_file(file));
  std::cout << pev::inspect_pe(img);
  return 0;
}

int cmd_scan(const std::string& dir, const OracleArgs& args) {
  auto oracle = pev::make_oracle(args.config());
  std::cout << "path,score,detected\n";
  for (const auto& path : sorted_files(dir)) {
    try {
      const pev::Bytes data = read_file(path);
      pev::parse_pe(data);
      const pev::Verdict v = oracle->classify(data);
      std::cout << path.string() << "," << fmt6(v.score) << "," << (v.detected ? 1 : 0) << "\n";
    } catch (const pev::MalformedPe& e) {
      log_info("skipping " + path.string() + ": " + e.what());
    }
  }
  return 0;
}

int cmd_filter(const std::string& dir, const OracleArgs& args) {
  auto oracle = pev::make_oracle(args.config());
  const pev::FilterResult result = pev::filter_dataset(dir, *oracle);
  std::cout << "path,status,reason,score\n";
  for (const auto& k : result.kept)
    std::cout << k.path.string() << ",kept,," << fmt6(k.score) << "\n";
  for (const auto& d : result.dropped) {
    std::cout << d.path.string() << ",dropped," << d.reason << ","
              << (d.reason == "score" ? fmt6(d.score) : "") << "\n";
  }
  log_info("kept " + std::to_string(result.kept.size()) + ", dropped " +
           std::to_string(result.dropped.size()));
  return 0;
}

int cmd_bank_build(const std::string& dir, const std::string& out) {
  const pev::ContentBank bank = pev::ContentBank::build(dir);
  bank.save(out);
  log_info("bank: " + std::to_string(bank.names().size()) + " names, " +
           std::to_string(bank.blocks().size()) + " blocks, digest " +
           pev::hex_u64(bank.seed_digest()));
  return 0;
}

int cmd_transform(const std::string& file, const std::string& action, std::uint64_t size,
                  long long target, std::uint64_t seed, const std::string& bank_path,
                  const std::string& content, const std::string& out) {
  const auto kind = pev::action_kind_from_string(action);
  if (!kind) throw CLI::ValidationError("--action", "unknown action: " + action);
  const pev::ContentBank bank =
      bank_path.empty() ? pev::ContentBank::none() : pev::ContentBank::load(bank_path);
  const pev::PeImage img = pev::parse_pe(read_file(file));

  pev::ActionSpec spec;
  spec.kind = *kind;
  spec.seed = seed;
  if (content == "goodware" || (content.empty() && bank.has_blocks()))
    spec.content_source = pev::ContentSource::goodware(0);
  if (size > 0) {
    spec.size = size;
  } else {
    // no size given: draw from the documented menu
    const auto menu = pev::size_menu(*kind);
    pev::Rng rng(pev::mix_seed(seed, 0x51));
    spec.size = menu[rng.below(menu.size())];
    if (*kind == pev::ActionKind::ExtendDos) spec.size *= img.opt().file_alignment;
  }
  if (target >= 0) spec.target = static_cast<std::size_t>(target);
  spec = pev::resolve_spec(img, spec, bank);

  const pev::PeImage result = pev::apply(img, spec, bank);
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw pev::Error("cannot write " + out);
  os.write(reinterpret_cast<const char*>(result.bytes().data()),
           static_cast<std::streamsize>(result.bytes().size()));
  log_info("applied " + spec.label() + ": " + std::to_string(img.size()) + " -> " +
           std::to_string(result.size()) + " bytes");
  return 0;
}

int cmd_corpus_gen(const std::string& profile, std::size_t n, std::uint64_t seed,
                   const std::string& out) {
  const auto p = pev::profile_from_string(profile);
  if (!p) throw CLI::ValidationError("--profile", "unknown profile: " + profile);
  const auto paths = pev::write_suite(out, n, *p, seed);
  log_info("wrote " + std::to_string(paths.size()) + " " + profile + " files to " + out);
  return 0;
}

int cmd_attack(AttackArgs& args) {
  args.merge_config();
  args.apply_log_level();
  const pev::CampaignConfig cfg = args.campaign_config();
  const pev::CampaignReport report = pev::run_campaign(cfg);
  std::uint64_t evaded = 0;
  for (const auto& o : report.outcomes)
    if (o.evaded) ++evaded;
  log_info("kept " + std::to_string(report.kept) + ", dropped " + std::to_string(report.dropped) +
           ", evaded " + std::to_string(evaded) + "/" + std::to_string(report.outcomes.size()));
  log_info("outputs in " + args.output);
  return 0;
}

int cmd_compare(AttackArgs& args) {
  args.merge_config();
  args.apply_log_level();
  const pev::CampaignConfig cfg = args.campaign_config();
  if (args.rounds < 1) throw CLI::ValidationError("--rounds", "must be >= 1");
  const pev::ComparisonReport cmp = pev::compare_samplers(cfg, args.rounds);
  std::cout << cmp.summary();
  log_info("outputs in " + args.output);
  return 0;
}

int cmd_replay(const std::string& log_path) {
  std::ifstream in(log_path);
  if (!in) throw pev::Error("cannot read " + log_path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  const pev::ReplayResult result = pev::replay_events(lines);
  for (const auto& a : result.arms) {
    std::cout << "arm " << a.label << " selections=" << a.selections << " pulls=" << a.stats.pulls
              << " reward_sum=" << fmt6(a.stats.reward_sum) << " alpha=" << fmt6(a.stats.alpha)
              << " beta=" << fmt6(a.stats.beta) << "\n";
  }
  std::cout << "total_pulls = " << result.total_pulls << "\n";
  return 0;
}

int cmd_report(const std::string& outdir) {
  const auto csv_path = std::filesystem::path(outdir) / "report.csv";
  std::ifstream in(csv_path);
  if (!in) throw pev::Error("cannot read " + csv_path.string());
  std::string line;
  if (!std::getline(in, line) || line != pev::kReportCsvHeader)
    throw pev::Error("unexpected CSV header in " + csv_path.string());

  struct Row {
    bool evaded, first, noimp, broken;
    int iterations;
    std::vector<std::string> kinds;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() < 9) throw pev::Error("short CSV row: " + line);
    Row r;
    r.evaded = cols[3] == "1";
    r.iterations = std::stoi(cols[4]);
    r.first = cols[5] == "1";
    r.noimp = cols[6] == "1";
    r.broken = cols[7] == "1";
    if (cols.size() >= 10 && !cols[9].empty()) {
      std::stringstream as(cols[9]);
      std::string a;
      while (std::getline(as, a, ';')) {
        const auto colon = a.find(':');
        r.kinds.push_back(a.substr(0, colon));
      }
    }
    rows.push_back(std::move(r));
  }

  std::uint64_t evaded = 0, first = 0, noimp = 0, broken = 0, iters = 0;
  for (const auto& r : rows) {
    if (r.evaded) {
      ++evaded;
      iters += static_cast<std::uint64_t>(r.iterations);
      if (r.first) ++first;
    }
    if (r.noimp) ++noimp;
    if (r.broken) ++broken;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  std::cout << "attacked = " << rows.size() << "\n";
  std::cout << "evaded = " << evaded << "\n";
  std::cout << "evasion_rate = " << fmt6(static_cast<double>(evaded) / n) << "\n";
  std::cout << "no_improvement_rate = " << fmt6(static_cast<double>(noimp) / n) << "\n";
  std::cout << "broken = " << broken << "\n";
  std::cout << "first_iteration_rate = " << fmt6(static_cast<double>(first) / n) << "\n";
  std::cout << "mean_iterations_evaded = "
            << fmt6(evaded ? static_cast<double>(iters) / static_cast<double>(evaded) : 0.0)
            << "\n";
  for (pev::ActionKind kind : pev::kAllActionKinds) {
    const std::string name = pev::to_string(kind);
    std::uint64_t count = 0, kind_iters = 0;
    for (const auto& r : rows) {
      if (!r.evaded) continue;
      if (std::find(r.kinds.begin(), r.kinds.end(), name) == r.kinds.end()) continue;
      ++count;
      kind_iters += static_cast<std::uint64_t>(r.iterations);
    }
    if (count == 0) continue;
    std::cout << "action." << name << ".evaded = " << count << "\n";
    std::cout << "action." << name << ".mean_iterations = "
              << fmt6(static_cast<double>(kind_iters) / static_cast<double>(count)) << "\n";
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box adversarial PE toolkit"};
  app.set_version_flag("--version", std::string("peevader ") + kVersion + " (builtin-weights " +
                                        pev::builtin_weight_digest() + ")");
  app.require_subcommand(1);

  // pe inspect
  auto* pe = app.add_subcommand("pe", "PE model utilities");
  pe->require_subcommand(1);
  auto* inspect = pe->add_subcommand("inspect", "dump header fields, one `name = hex` per line");
  std::string inspect_file;
  inspect->add_option("file", inspect_file, "PE file")->required();

  // scan
  auto* scan = app.add_subcommand("scan", "print per-file scores as CSV");
  std::string scan_dir;
  scan->add_option("dir", scan_dir, "directory of PE files")->required();
  OracleArgs scan_oracle;
  scan_oracle.attach(scan);

  // filter
  auto* filter = app.add_subcommand("filter", "partition a dataset at the detection threshold");
  std::string filter_dir;
  filter->add_option("dir", filter_dir, "directory of PE files")->required();
  OracleArgs filter_oracle;
  filter_oracle.attach(filter);

  // bank build
  auto* bank = app.add_subcommand("bank", "goodware content bank");
  bank->require_subcommand(1);
  auto* bank_build = bank->add_subcommand("build", "harvest names and blocks from benign PEs");
  std::string bank_dir, bank_out;
  bank_build->add_option("dir", bank_dir, "directory of benign PEs")->required();
  bank_build->add_option("-o,--output", bank_out, "bank file to write")->required();

  // transform
  auto* transform = app.add_subcommand("transform", "apply one action standalone");
  std::string tr_file, tr_action, tr_bank, tr_out, tr_content;
  std::uint64_t tr_size = 0, tr_seed = 0;
  long long tr_target = -1;
  transform->add_option("file", tr_file, "input PE")->required();
  transform->add_option("--action", tr_action, "action kind")->required();
  transform->add_option("--size", tr_size, "content length / shift (default: menu draw)");
  transform->add_option("--target", tr_target, "target section index");
  transform->add_option("--seed", tr_seed, "spec seed");
  transform->add_option("--bank", tr_bank, "goodware content bank");
  transform->add_option("--content", tr_content, "rand | goodware");
  transform->add_option("-o,--output", tr_out, "output file")->required();

  // corpus gen
  auto* corpus = app.add_subcommand("corpus", "synthetic PE corpus");
  corpus->require_subcommand(1);
  auto* corpus_gen = corpus->add_subcommand("gen", "generate a suite of synthetic PEs");
  std::string cg_profile = "malicious", cg_out;
  std::size_t cg_n = 10;
  std::uint64_t cg_seed = 0;
  corpus_gen->add_option("--profile", cg_profile, "benign | malicious | malicious-nohdr");
  corpus_gen->add_option("-n,--count", cg_n, "number of files");
  corpus_gen->add_option("--seed", cg_seed, "suite seed");
  corpus_gen->add_option("-o,--output", cg_out, "output directory")->required();

  // attack
  auto* attack = app.add_subcommand("attack", "run an evasion campaign over a dataset");
  AttackArgs attack_args;
  attack_args.attach(attack, false);

  // compare-sampling
  auto* compare = app.add_subcommand("compare-sampling",
                                     "run the identical campaign under UCB1 and Thompson");
  AttackArgs compare_args;
  compare_args.attach(compare, true);

  // replay
  auto* replay = app.add_subcommand("replay", "reconstruct bandit state from an event log");
  std::string replay_log;
  replay->add_option("log", replay_log, "bandit.log file")->required();

  // report
  auto* report = app.add_subcommand("report", "recompute summary tables from report.csv");
  std::string report_dir;
  report->add_option("outdir", report_dir, "campaign output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help / --version
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 1;
  }

  try {
    if (inspect->parsed()) return cmd_pe_inspect(inspect_file);
    if (scan->parsed()) return cmd_scan(scan_dir, scan_oracle);
    if (filter->parsed()) return cmd_filter(filter_dir, filter_oracle);
    if (bank_build->parsed()) return cmd_bank_build(bank_dir, bank_out);
    if (transform->parsed())
      return cmd_transform(tr_file, tr_action, tr_size, tr_target, tr_seed, tr_bank, tr_content,
                           tr_out);
    if (corpus_gen->parsed()) return cmd_corpus_gen(cg_profile, cg_n, cg_seed, cg_out);
    if (attack->parsed()) return cmd_attack(attack_args);
    if (compare->parsed()) return cmd_compare(compare_args);
    if (replay->parsed()) return cmd_replay(replay_log);
    if (report->parsed()) return cmd_report(report_dir);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const pev::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
