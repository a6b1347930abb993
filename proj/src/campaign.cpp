#include "peevader/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace pev {

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

// Serializes all bandit access; workers post selections and rewards here and
// the state applies them in arrival order.
class Coordinator {
public:
  explicit Coordinator(BanditState& state) : state_(state) {}

  Arm select() {
    std::lock_guard lock(mu_);
    return state_.select();
  }
  void update(std::uint32_t arm_id, double reward) {
    std::lock_guard lock(mu_);
    state_.update(arm_id, reward);
  }
  void assign(const AttackTrace& minimized, bool fractional) {
    std::lock_guard lock(mu_);
    assign_rewards(state_, minimized, fractional);
  }
  std::vector<std::string> events() const {
    std::lock_guard lock(mu_);
    return state_.events();
  }

private:
  mutable std::mutex mu_;
  BanditState& state_;
};

BanditConfig bandit_config(const CampaignConfig& cfg, std::uint64_t seed) {
  BanditConfig bc;
  bc.sampler = cfg.sampler;
  bc.seed = seed;
  bc.ucb_c = cfg.ucb_c;
  bc.prior_alpha = cfg.prior_alpha;
  bc.prior_beta = cfg.prior_beta;
  bc.menu_override = cfg.menu_override;
  return bc;
}

struct AttackContext {
  const CampaignConfig& cfg;
  Coordinator& coord;
  OracleClient& oracle;
  const ContentBank& bank;
};

std::pair<SampleOutcome, AttackTrace> attack_one(const PeImage& original, AttackContext& ctx,
                                                 std::uint64_t sample_seed) {
  const CampaignConfig& cfg = ctx.cfg;
  SampleOutcome o;
  o.sample_id = hex_u64(fnv1a64(original.bytes()));
  AttackTrace trace;
  std::uint64_t queries = 0;
  Rng srng(sample_seed);

  try {
    const Verdict v0 = ctx.oracle.classify(original.bytes());
    ++queries;
    if (!v0.detected) throw InvalidSpec("sample is not detected by the oracle");
    o.initial_score = v0.score;
    trace.initial_score = v0.score;
    double best = v0.score;

    PeImage cur = original;
    const int per_iter = cfg.max_actions_per_iteration;
    bool evaded = false;
    int iter = 0;
    for (iter = 1; iter <= cfg.max_iterations && !evaded; ++iter) {
      const int budget = per_iter > 0 ? per_iter : static_cast<int>(cfg.actions_enabled.size());
      bool changed = false;
      const std::size_t first_of_iter = trace.entries.size();
      for (int j = 0; j < budget; ++j) {
        const Arm arm = ctx.coord.select();
        ActionSpec spec;
        spec.kind = arm.kind;
        spec.size = arm.kind == ActionKind::ExtendDos
                        ? arm.size_bucket * cur.opt().file_alignment
                        : arm.size_bucket;
        spec.content_source = arm.content_source;
        spec.seed = srng.next();
        spec = resolve_spec(cur, spec, ctx.bank);

        TraceEntry entry;
        entry.spec = spec;
        entry.arm_id = arm.id;
        try {
          PeImage next = apply(cur, spec, ctx.bank);
          const EquivalenceReport eq = check_equivalence(original, next);
          if (!eq.ok) {
            o.broken = true; // reverted: keep attacking from `cur`
          } else {
            cur = std::move(next);
            entry.applied = true;
            changed = true;
          }
        } catch (const NotApplicable&) {
          o.broken = true;
        } catch (const InvalidSpec&) {
          o.broken = true;
        } catch (const MalformedPe&) {
          o.broken = true;
        } catch (const InconsistentModel&) {
          o.broken = true;
        }
        trace.entries.push_back(entry);
      }
      if (!changed) continue; // nothing applied, score unchanged
      const Verdict v = ctx.oracle.classify(cur.bytes());
      ++queries;
      for (std::size_t k = first_of_iter; k < trace.entries.size(); ++k)
        trace.entries[k].score_after = v.score;
      best = std::min(best, v.score);
      if (!v.detected) evaded = true;
    }
    o.iterations_used = evaded ? iter - 1 : cfg.max_iterations;

    if (evaded) {
      trace.evaded = true;
      AttackTrace minimized = minimize_trace(trace, original, ctx.oracle, ctx.bank);
      queries += minimized.minimize_probes;
      ctx.coord.assign(minimized, cfg.fractional_rewards);
      o.evaded = true;
      o.final_score = std::min(best, minimized.final_score);
      for (const auto& e : minimized.entries)
        if (e.survived) o.minimized_actions.push_back(e.spec);
      trace = std::move(minimized);
    } else {
      for (const auto& e : trace.entries) ctx.coord.update(e.arm_id, 0.0);
      o.final_score = best;
    }
  } catch (const OracleFailure& e) {
    o.error = e.what();
    o.evaded = false;
    o.broken = false;
    o.final_score = o.initial_score;
  }

  o.first_iteration_evasion = o.evaded && o.iterations_used == 1;
  o.no_improvement = o.final_score >= o.initial_score;
  o.queries = queries;
  trace.final_score = o.final_score;
  return {o, trace};
}

void aggregate(CampaignReport& report, const CampaignConfig& cfg,
               const std::vector<AttackTrace>& traces) {
  report.histogram.assign(static_cast<std::size_t>(cfg.max_iterations), 0);
  for (ActionKind k : cfg.actions_enabled) report.per_action[k] = ActionStats{};

  std::map<ActionKind, std::uint64_t> iter_sum;
  for (const auto& o : report.outcomes) {
    report.total_queries += o.queries;
    if (o.evaded && o.iterations_used >= 1 &&
        o.iterations_used <= cfg.max_iterations)
      ++report.histogram[static_cast<std::size_t>(o.iterations_used - 1)];
  }

  // a sample attributes to a kind as "attacked" when the kind was pulled for
  // it, and as "evaded" when the kind survived minimization; isolation mode
  // reduces to the natural per-action stats
  for (std::size_t i = 0; i < report.outcomes.size(); ++i) {
    const auto& o = report.outcomes[i];
    std::vector<ActionKind> pulled;
    if (cfg.actions_enabled.size() == 1) {
      pulled = cfg.actions_enabled;
    } else {
      for (const auto& e : traces[i].entries)
        if (std::find(pulled.begin(), pulled.end(), e.spec.kind) == pulled.end())
          pulled.push_back(e.spec.kind);
    }
    std::vector<ActionKind> evading_kinds;
    for (const auto& spec : o.minimized_actions)
      if (std::find(evading_kinds.begin(), evading_kinds.end(), spec.kind) ==
          evading_kinds.end())
        evading_kinds.push_back(spec.kind);

    for (ActionKind k : pulled) {
      ActionStats& st = report.per_action[k];
      ++st.attacked;
      if (o.no_improvement) ++st.no_improvement;
    }
    for (ActionKind k : evading_kinds) {
      ActionStats& st = report.per_action[k];
      ++st.evaded;
      if (o.first_iteration_evasion) ++st.first_iteration;
      iter_sum[k] += static_cast<std::uint64_t>(o.iterations_used);
    }
  }
  for (auto& [kind, st] : report.per_action)
    st.mean_iterations =
        st.evaded ? static_cast<double>(iter_sum[kind]) / static_cast<double>(st.evaded) : 0.0;
}

} // namespace

std::pair<SampleOutcome, AttackTrace> attack_sample(const PeImage& original,
                                                    const CampaignConfig& cfg,
                                                    BanditState& state, OracleClient& oracle,
                                                    const ContentBank& bank,
                                                    std::uint64_t sample_seed) {
  Coordinator coord(state);
  AttackContext ctx{cfg, coord, oracle, bank};
  return attack_one(original, ctx, sample_seed);
}

CampaignReport run_campaign(const CampaignConfig& cfg) {
  auto oracle = make_oracle(cfg.oracle);
  return run_campaign(cfg, *oracle, 1);
}

CampaignReport run_campaign(const CampaignConfig& cfg, OracleClient& oracle, int rounds) {
  if (cfg.max_iterations < 1) throw InvalidSpec("max_iterations must be >= 1");
  if (cfg.actions_enabled.empty()) throw InvalidSpec("no actions enabled");
  if (rounds < 1) throw InvalidSpec("rounds must be >= 1");

  const ContentBank bank =
      cfg.bank_path ? ContentBank::load(*cfg.bank_path) : ContentBank::none();

  const FilterResult filtered = filter_dataset(cfg.dataset_dir, oracle);
  if (filtered.kept.empty()) throw EmptyDataset("no detected samples in " +
                                                cfg.dataset_dir.string());

  CampaignReport report;
  report.sampler = cfg.sampler;
  report.seed = cfg.seed;
  report.max_iterations = cfg.max_iterations;
  report.dataset_size = filtered.kept.size() + filtered.dropped.size();
  report.kept = filtered.kept.size();
  report.dropped = filtered.dropped.size();

  BanditState shared_state =
      BanditState::make(cfg.actions_enabled, bank, bandit_config(cfg, mix_seed(cfg.seed, 0xbd)));
  Coordinator shared_coord(shared_state);

  const std::size_t total_jobs = filtered.kept.size() * static_cast<std::size_t>(rounds);
  report.outcomes.resize(total_jobs);
  std::vector<AttackTrace> traces(total_jobs);
  std::vector<std::string> fresh_events(total_jobs);

  std::atomic<std::size_t> next_job{0};
  std::mutex error_mu;
  std::string first_error;

  auto worker = [&]() {
    for (;;) {
      const std::size_t job = next_job.fetch_add(1);
      if (job >= total_jobs) return;
      const std::size_t round = job / filtered.kept.size();
      const std::size_t idx = job % filtered.kept.size();
      const auto& kept = filtered.kept[idx];
      try {
        const Bytes data = read_file(kept.path);
        const PeImage original = parse_pe(data);
        const std::uint64_t sample_seed =
            mix_seed(mix_seed(cfg.seed, fnv1a64(data)), round);

        SampleOutcome outcome;
        AttackTrace trace;
        if (cfg.fresh_bandit) {
          BanditState local_state = BanditState::make(
              cfg.actions_enabled, bank, bandit_config(cfg, mix_seed(sample_seed, 0xbd)));
          Coordinator local(local_state);
          AttackContext ctx{cfg, local, oracle, bank};
          std::tie(outcome, trace) = attack_one(original, ctx, sample_seed);
          std::string log;
          for (const auto& e : local.events()) log += e + "\n";
          fresh_events[job] = std::move(log);
        } else {
          AttackContext ctx{cfg, shared_coord, oracle, bank};
          std::tie(outcome, trace) = attack_one(original, ctx, sample_seed);
        }
        outcome.path = kept.path;
        report.outcomes[job] = std::move(outcome);
        traces[job] = std::move(trace);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mu);
        if (first_error.empty()) first_error = e.what();
        return;
      }
    }
  };

  const int nworkers = std::max(1, cfg.workers);
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nworkers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!first_error.empty()) throw Error("campaign failed: " + first_error);

  if (cfg.fresh_bandit) {
    for (auto& log : fresh_events) {
      std::istringstream is(log);
      std::string line;
      while (std::getline(is, line))
        if (!line.empty()) report.bandit_events.push_back(line);
    }
  } else {
    report.bandit_events = shared_coord.events();
  }

  aggregate(report, cfg, traces);

  if (cfg.output_dir) {
    std::filesystem::create_directories(*cfg.output_dir);
    write_text(*cfg.output_dir / "report.csv", report.csv());
    write_text(*cfg.output_dir / "summary.txt", report.summary());
    write_text(*cfg.output_dir / "histogram.csv", report.histogram_csv());
    std::string events;
    for (const auto& e : report.bandit_events) events += e + "\n";
    write_text(*cfg.output_dir / "bandit.log", events);
    std::string mapping;
    for (const auto& o : report.outcomes)
      mapping += o.sample_id + "," + o.path.string() + "\n";
    write_text(*cfg.output_dir / "samples.txt", mapping);
    // evaded artifacts, rebuilt from the minimized traces
    for (std::size_t job = 0; job < total_jobs; ++job) {
      const auto& o = report.outcomes[job];
      if (!o.evaded) continue;
      const Bytes data = read_file(o.path);
      const PeImage original = parse_pe(data);
      const PeImage adv = rebuild_trace(original, traces[job], bank);
      std::ofstream out(*cfg.output_dir / (o.sample_id + ".adv"),
                        std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(adv.bytes().data()),
                static_cast<std::streamsize>(adv.bytes().size()));
    }
  }
  return report;
}

std::string CampaignReport::csv() const {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& o : outcomes) {
    std::string actions;
    for (std::size_t i = 0; i < o.minimized_actions.size(); ++i) {
      if (i) actions += ";";
      actions += o.minimized_actions[i].label();
    }
    out += o.sample_id + "," + fmt6(o.initial_score) + "," + fmt6(o.final_score) + "," +
           (o.evaded ? "1" : "0") + "," + std::to_string(o.iterations_used) + "," +
           (o.first_iteration_evasion ? "1" : "0") + "," + (o.no_improvement ? "1" : "0") + "," +
           (o.broken ? "1" : "0") + "," + std::to_string(o.queries) + "," + actions + "\n";
  }
  return out;
}

std::string CampaignReport::summary() const {
  std::ostringstream os;
  std::uint64_t evaded = 0, no_improve = 0, broken = 0, first_iter = 0, iter_sum = 0,
                aborted = 0;
  for (const auto& o : outcomes) {
    if (o.evaded) {
      ++evaded;
      iter_sum += static_cast<std::uint64_t>(o.iterations_used);
      if (o.first_iteration_evasion) ++first_iter;
    }
    if (o.no_improvement) ++no_improve;
    if (o.broken) ++broken;
    if (!o.error.empty()) ++aborted;
  }
  const double attacked = outcomes.empty() ? 1.0 : static_cast<double>(outcomes.size());
  os << "sampler = " << to_string(sampler) << "\n";
  os << "seed = " << seed << "\n";
  os << "max_iterations = " << max_iterations << "\n";
  os << "dataset_size = " << dataset_size << "\n";
  os << "kept = " << kept << "\n";
  os << "dropped = " << dropped << "\n";
  os << "attacked = " << outcomes.size() << "\n";
  os << "evaded = " << evaded << "\n";
  os << "evasion_rate = " << fmt6(static_cast<double>(evaded) / attacked) << "\n";
  os << "no_improvement_rate = " << fmt6(static_cast<double>(no_improve) / attacked) << "\n";
  os << "broken = " << broken << "\n";
  os << "aborted = " << aborted << "\n";
  os << "first_iteration_rate = " << fmt6(static_cast<double>(first_iter) / attacked) << "\n";
  os << "mean_iterations_evaded = "
     << fmt6(evaded ? static_cast<double>(iter_sum) / static_cast<double>(evaded) : 0.0) << "\n";
  os << "total_queries = " << total_queries << "\n";
  for (const auto& [kind, st] : per_action) {
    const std::string p = "action." + to_string(kind) + ".";
    const double att = st.attacked ? static_cast<double>(st.attacked) : 1.0;
    os << p << "attacked = " << st.attacked << "\n";
    os << p << "evaded = " << st.evaded << "\n";
    os << p << "evasion_rate = " << fmt6(static_cast<double>(st.evaded) / att) << "\n";
    os << p << "no_improvement_rate = " << fmt6(static_cast<double>(st.no_improvement) / att)
       << "\n";
    os << p << "first_iteration_rate = " << fmt6(static_cast<double>(st.first_iteration) / att)
       << "\n";
    os << p << "mean_iterations = " << fmt6(st.mean_iterations) << "\n";
  }
  for (std::size_t i = 0; i < histogram.size(); ++i)
    os << "histogram." << (i + 1) << " = " << histogram[i] << "\n";
  return os.str();
}

std::string CampaignReport::histogram_csv() const {
  std::string out = "action,iteration,count\n";
  for (std::size_t i = 0; i < histogram.size(); ++i)
    out += "all," + std::to_string(i + 1) + "," + std::to_string(histogram[i]) + "\n";
  for (const auto& [kind, st] : per_action) {
    (void)st;
    std::vector<std::uint64_t> buckets(histogram.size(), 0);
    for (const auto& o : outcomes) {
      if (!o.evaded) continue;
      bool uses_kind = false;
      for (const auto& spec : o.minimized_actions) uses_kind = uses_kind || spec.kind == kind;
      if (uses_kind && o.iterations_used >= 1 &&
          o.iterations_used <= static_cast<int>(buckets.size()))
        ++buckets[static_cast<std::size_t>(o.iterations_used - 1)];
    }
    for (std::size_t i = 0; i < buckets.size(); ++i)
      out += to_string(kind) + "," + std::to_string(i + 1) + "," + std::to_string(buckets[i]) +
             "\n";
  }
  return out;
}

std::vector<std::uint64_t> iteration_histogram(const CampaignReport& report, ActionKind kind) {
  std::vector<std::uint64_t> buckets(static_cast<std::size_t>(report.max_iterations), 0);
  for (const auto& o : report.outcomes) {
    if (!o.evaded) continue;
    bool uses_kind = false;
    for (const auto& spec : o.minimized_actions) uses_kind = uses_kind || spec.kind == kind;
    if (uses_kind && o.iterations_used >= 1 && o.iterations_used <= report.max_iterations)
      ++buckets[static_cast<std::size_t>(o.iterations_used - 1)];
  }
  return buckets;
}

ComparisonReport compare_samplers(const CampaignConfig& cfg, int rounds) {
  auto oracle = make_oracle(cfg.oracle);
  return compare_samplers(cfg, *oracle, rounds);
}

ComparisonReport compare_samplers(const CampaignConfig& cfg, OracleClient& oracle, int rounds) {
  ComparisonReport cmp;
  for (SamplerKind sampler : {SamplerKind::Ucb1, SamplerKind::Thompson}) {
    CampaignConfig c = cfg;
    c.sampler = sampler;
    if (cfg.output_dir) c.output_dir = *cfg.output_dir / to_string(sampler);
    CampaignReport rep = run_campaign(c, oracle, rounds);
    (sampler == SamplerKind::Ucb1 ? cmp.ucb1 : cmp.thompson) = std::move(rep);
  }
  if (cfg.output_dir) {
    std::filesystem::create_directories(*cfg.output_dir);
    write_text(*cfg.output_dir / "comparison.csv", cmp.curves_csv());
    write_text(*cfg.output_dir / "comparison_summary.txt", cmp.summary());
  }
  return cmp;
}

std::string ComparisonReport::curves_csv() const {
  std::string out = "sampler,event_index,cumulative_reward\n";
  for (const CampaignReport* rep : {&ucb1, &thompson}) {
    double cum = 0.0;
    std::uint64_t idx = 0;
    for (const auto& line : rep->bandit_events) {
      if (line.rfind("reward ", 0) != 0) continue;
      const auto last_space = line.rfind(' ');
      cum += std::strtod(line.c_str() + last_space + 1, nullptr);
      ++idx;
      out += to_string(rep->sampler) + "," + std::to_string(idx) + "," + fmt6(cum) + "\n";
    }
  }
  return out;
}

std::string ComparisonReport::summary() const {
  std::ostringstream os;
  for (const CampaignReport* rep : {&ucb1, &thompson}) {
    std::uint64_t evaded = 0;
    for (const auto& o : rep->outcomes)
      if (o.evaded) ++evaded;
    const double attacked =
        rep->outcomes.empty() ? 1.0 : static_cast<double>(rep->outcomes.size());
    const std::string p = to_string(rep->sampler) + ".";
    os << p << "attacked = " << rep->outcomes.size() << "\n";
    os << p << "evaded = " << evaded << "\n";
    os << p << "evasion_rate = " << fmt6(static_cast<double>(evaded) / attacked) << "\n";
    os << p << "total_queries = " << rep->total_queries << "\n";
  }
  return os.str();
}

} // namespace pev
