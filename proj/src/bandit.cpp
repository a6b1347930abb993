#include "peevader/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pev {

std::string to_string(SamplerKind s) {
  return s == SamplerKind::Ucb1 ? "ucb1" : "thompson";
}

std::optional<SamplerKind> sampler_from_string(std::string_view s) {
  if (s == "ucb1") return SamplerKind::Ucb1;
  if (s == "thompson") return SamplerKind::Thompson;
  return std::nullopt;
}

std::string Arm::label() const {
  return to_string(kind) + ":" + std::to_string(size_bucket) + ":" + content_source.label();
}

BanditState BanditState::make(const std::vector<ActionKind>& enabled, const ContentBank& bank,
                              const BanditConfig& cfg) {
  if (enabled.empty()) throw InvalidSpec("no actions enabled");
  BanditState st;
  st.cfg_ = cfg;
  st.rng_ = Rng(mix_seed(cfg.seed, 0x7150));
  Rng block_rng(mix_seed(cfg.seed, 0xb10c));

  // canonical enumeration: kinds in catalogue order, buckets ascending,
  // random content before goodware; ids are positions in this order
  for (ActionKind kind : kAllActionKinds) {
    if (std::find(enabled.begin(), enabled.end(), kind) == enabled.end()) continue;
    std::vector<std::uint64_t> menu = size_menu(kind);
    if (auto it = cfg.menu_override.find(kind); it != cfg.menu_override.end()) menu = it->second;
    for (std::uint64_t bucket : menu) {
      if (st.arms_.size() >= cfg.max_arms) break;
      Arm arm;
      arm.id = static_cast<std::uint32_t>(st.arms_.size());
      arm.kind = kind;
      arm.size_bucket = bucket;
      arm.content_source = ContentSource::random();
      st.arms_.push_back(arm);
      // content choice is part of the arm identity: each goodware arm pins
      // its own sampled block
      if (bank.has_blocks() && kind != ActionKind::CodeRandomize &&
          st.arms_.size() < cfg.max_arms) {
        arm.id = static_cast<std::uint32_t>(st.arms_.size());
        arm.content_source = ContentSource::goodware(
            static_cast<std::uint32_t>(block_rng.below(bank.blocks().size())));
        st.arms_.push_back(arm);
      }
    }
  }
  st.stats_.assign(st.arms_.size(), ArmStats{0, 0.0, cfg.prior_alpha, cfg.prior_beta});
  return st;
}

const Arm& BanditState::select_ucb1() const {
  for (std::size_t i = 0; i < arms_.size(); ++i)
    if (stats_[i].pulls == 0) return arms_[i];
  std::size_t best = 0;
  double best_index = -1.0;
  const double log_n = std::log(static_cast<double>(total_pulls_));
  for (std::size_t i = 0; i < arms_.size(); ++i) {
    const double mean = stats_[i].reward_sum / static_cast<double>(stats_[i].pulls);
    const double index =
        mean + std::sqrt(cfg_.ucb_c * log_n / static_cast<double>(stats_[i].pulls));
    if (index > best_index) {
      best_index = index;
      best = i;
    }
  }
  return arms_[best];
}

const Arm& BanditState::select_thompson(Rng& rng) const {
  std::size_t best = 0;
  double best_theta = -1.0;
  for (std::size_t i = 0; i < arms_.size(); ++i) {
    const double x = rng.gamma(stats_[i].alpha);
    const double y = rng.gamma(stats_[i].beta);
    const double theta = x / (x + y);
    if (theta > best_theta) {
      best_theta = theta;
      best = i;
    }
  }
  return arms_[best];
}

const Arm& BanditState::select() {
  if (arms_.empty()) throw InvalidSpec("bandit has no arms");
  const Arm& arm =
      cfg_.sampler == SamplerKind::Ucb1 ? select_ucb1() : select_thompson(rng_);
  events_.push_back("pull " + arm.label());
  return arm;
}

void BanditState::update(std::uint32_t arm_id, double reward) {
  if (arm_id >= arms_.size()) throw UnknownArm("arm id " + std::to_string(arm_id));
  if (!(reward >= 0.0 && reward <= 1.0)) throw InvalidSpec("reward outside [0,1]");
  ArmStats& s = stats_[arm_id];
  s.pulls += 1;
  s.reward_sum += reward;
  s.alpha += reward;
  s.beta += 1.0 - reward;
  total_pulls_ += 1;
  char num[32];
  if (reward == 0.0 || reward == 1.0)
    std::snprintf(num, sizeof num, "%d", reward == 1.0 ? 1 : 0);
  else
    std::snprintf(num, sizeof num, "%.6f", reward);
  events_.push_back("reward " + arms_[arm_id].label() + " " + num);
}

const ArmStats& BanditState::stats_for(std::uint32_t arm_id) const {
  if (arm_id >= arms_.size()) throw UnknownArm("arm id " + std::to_string(arm_id));
  return stats_[arm_id];
}

ReplayResult replay_events(const std::vector<std::string>& lines) {
  ReplayResult result;
  auto find = [&result](const std::string& label) -> ReplayedArm& {
    for (auto& a : result.arms)
      if (a.label == label) return a;
    result.arms.push_back({label, 0, ArmStats{}});
    return result.arms.back();
  };
  for (const auto& line : lines) {
    std::istringstream is(line);
    std::string verb, label;
    is >> verb >> label;
    if (verb == "pull" && !label.empty()) {
      find(label).selections += 1;
    } else if (verb == "reward" && !label.empty()) {
      double r = 0.0;
      if (!(is >> r) || r < 0.0 || r > 1.0) throw Error("bad reward line: " + line);
      ReplayedArm& a = find(label);
      a.stats.pulls += 1;
      a.stats.reward_sum += r;
      a.stats.alpha += r;
      a.stats.beta += 1.0 - r;
      result.total_pulls += 1;
    } else if (!verb.empty()) {
      throw Error("bad event line: " + line);
    }
  }
  return result;
}

PeImage rebuild_trace(const PeImage& original, const AttackTrace& trace,
                      const ContentBank& bank) {
  PeImage img = original;
  for (const auto& e : trace.entries)
    if (e.applied && e.survived) img = apply(img, e.spec, bank);
  return img;
}

namespace {

bool shrinkable(ActionKind kind) {
  switch (kind) {
    case ActionKind::Padding:
    case ActionKind::SectionAppend:
    case ActionKind::SectionAdd:
    case ActionKind::ExtendDos: return true;
    default: return false;
  }
}

struct Probe {
  bool evasive = false;
  double score = 1.0;
};

Probe probe_subset(const PeImage& original, const std::vector<TraceEntry>& entries,
                   const std::vector<char>& keep, OracleClient& oracle, const ContentBank& bank,
                   std::uint64_t& probes) {
  PeImage img = original;
  try {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (keep[i] && entries[i].applied) img = apply(img, entries[i].spec, bank);
  } catch (const Error&) {
    // structurally broken subsets count as non-evasive
    return {false, 1.0};
  }
  ++probes;
  const Verdict v = oracle.classify(img.bytes());
  return {!v.detected, v.score};
}

} // namespace

AttackTrace minimize_trace(const AttackTrace& trace, const PeImage& original,
                           OracleClient& oracle, const ContentBank& bank) {
  if (!trace.evaded) throw InvalidSpec("minimize_trace needs an evasive trace");

  AttackTrace out = trace;
  auto& es = out.entries;
  std::vector<char> keep(es.size(), 0);
  for (std::size_t i = 0; i < es.size(); ++i) keep[i] = es[i].applied ? 1 : 0;
  std::uint64_t probes = 0;

  // macro phase: drop every action whose removal keeps the sample evasive
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (!keep[i]) continue;
    keep[i] = 0;
    if (!probe_subset(original, es, keep, oracle, bank, probes).evasive) keep[i] = 1;
  }

  // micro phase: halve content sizes while the sample stays evasive
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (!keep[i] || !shrinkable(es[i].spec.kind)) continue;
    const std::uint64_t unit =
        es[i].spec.kind == ActionKind::ExtendDos ? original.opt().file_alignment : 1;
    std::uint64_t cur = es[i].spec.size;
    for (;;) {
      const std::uint64_t cand = (cur / 2) / unit * unit;
      if (cand < unit) break;
      es[i].spec.size = cand;
      if (probe_subset(original, es, keep, oracle, bank, probes).evasive) {
        cur = cand;
      } else {
        es[i].spec.size = cur;
        break;
      }
    }
  }

  // 1-minimality audit; a drop can only fire for non-monotone oracles, in
  // which case the audit restarts
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (!keep[i]) continue;
    keep[i] = 0;
    if (!probe_subset(original, es, keep, oracle, bank, probes).evasive)
      keep[i] = 1;
    else
      i = static_cast<std::size_t>(-1);
  }

  const Probe fin = probe_subset(original, es, keep, oracle, bank, probes);
  if (!fin.evasive)
    throw OracleFailure("minimized trace no longer evades; oracle is not deterministic");

  for (std::size_t i = 0; i < es.size(); ++i) {
    es[i].survived = keep[i] != 0;
    if (es[i].survived) es[i].score_after = fin.score;
  }
  out.evaded = true;
  out.final_score = fin.score;
  out.minimize_probes = probes;
  return out;
}

void assign_rewards(BanditState& state, const AttackTrace& minimized, bool fractional) {
  double survivor_reward = 1.0;
  if (fractional) {
    const double drop = minimized.initial_score - minimized.final_score;
    survivor_reward = std::clamp(drop, 0.0, 1.0);
  }
  for (const auto& e : minimized.entries)
    state.update(e.arm_id, e.survived ? survivor_reward : 0.0);
}

} // namespace pev
