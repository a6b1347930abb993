#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "peevader/content_bank.hpp"
#include "peevader/oracle.hpp"
#include "peevader/transforms.hpp"

namespace pev {

enum class SamplerKind { Ucb1, Thompson };

std::string to_string(SamplerKind s);
std::optional<SamplerKind> sampler_from_string(std::string_view s);

// One arm = (action kind, size bucket, content source). id is the index in
// the state's canonical enumeration, so equal triples always share an id.
struct Arm {
  std::uint32_t id = 0;
  ActionKind kind = ActionKind::Padding;
  std::uint64_t size_bucket = 0;
  ContentSource content_source = ContentSource::random();

  std::string label() const; // "padding:8192:rand"
};

struct ArmStats {
  std::uint64_t pulls = 0;
  double reward_sum = 0.0;
  double alpha = 1.0; // Beta posterior, 1 + successes for binary rewards
  double beta = 1.0;  // 1 + failures
};

struct BanditConfig {
  SamplerKind sampler = SamplerKind::Thompson;
  std::uint64_t seed = 0;
  double ucb_c = 2.0; // exploration constant in sqrt(c ln N / n)
  double prior_alpha = 1.0;
  double prior_beta = 1.0;
  std::size_t max_arms = 64;
  // test hook: pin per-kind size menus (empty = standard menu)
  std::map<ActionKind, std::vector<std::uint64_t>> menu_override;
};

// Per-arm statistics plus the selection rules. Selection depends only on the
// stats and the internal seeded stream -- never on any sample's identity.
class BanditState {
public:
  static BanditState make(const std::vector<ActionKind>& enabled, const ContentBank& bank,
                          const BanditConfig& cfg);

  // Sampler dispatch; records a `pull` event.
  const Arm& select();

  // UCB1 index rule: unpulled arms first in id order, then
  // argmax mean + sqrt(c ln N / n), ties to the lowest id.
  const Arm& select_ucb1() const;

  // Thompson rule: argmax of one Beta(alpha, beta) draw per arm.
  const Arm& select_thompson(Rng& rng) const;

  // reward in [0, 1]; binary campaigns pass exactly 0 or 1
  void update(std::uint32_t arm_id, double reward);

  const std::vector<Arm>& arms() const { return arms_; }
  const std::vector<ArmStats>& stats() const { return stats_; }
  const ArmStats& stats_for(std::uint32_t arm_id) const;
  std::uint64_t total_pulls() const { return total_pulls_; }
  SamplerKind sampler() const { return cfg_.sampler; }
  const BanditConfig& config() const { return cfg_; }

  // line-delimited `pull <arm>` / `reward <arm> <r>` records, arrival order
  const std::vector<std::string>& events() const { return events_; }

private:
  BanditState() : rng_(0) {}

  BanditConfig cfg_;
  std::vector<Arm> arms_;
  std::vector<ArmStats> stats_;
  std::uint64_t total_pulls_ = 0;
  Rng rng_;
  std::vector<std::string> events_;
};

// Aggregated view of a replayed event log.
struct ReplayedArm {
  std::string label;
  std::uint64_t selections = 0; // `pull` lines
  ArmStats stats;               // rebuilt from `reward` lines
};

struct ReplayResult {
  std::vector<ReplayedArm> arms; // first-appearance order
  std::uint64_t total_pulls = 0;
};

ReplayResult replay_events(const std::vector<std::string>& lines);

// One applied (or attempted) action during an attack.
struct TraceEntry {
  ActionSpec spec;
  std::uint32_t arm_id = 0;
  double score_after = 1.0;
  bool applied = false;  // transform succeeded and stayed in the chain
  bool survived = false; // still present after minimization
};

struct AttackTrace {
  std::vector<TraceEntry> entries;
  double initial_score = 1.0;
  double final_score = 1.0;
  bool evaded = false;
  std::uint64_t minimize_probes = 0; // classifier queries spent minimizing
};

// Re-applies the surviving entries of a trace to the original image.
PeImage rebuild_trace(const PeImage& original, const AttackTrace& trace, const ContentBank& bank);

// Macro phase drops actions whose removal keeps the sample evasive (tested in
// order, drops are permanent); micro phase shrinks each surviving
// content-injecting action by iterated halving; a final audit confirms
// 1-minimality (re-testing every single-action deletion). The returned trace
// re-verifies as evasive; eliminated entries stay present with
// survived == false so rewards can be assigned.
AttackTrace minimize_trace(const AttackTrace& trace, const PeImage& original,
                           OracleClient& oracle, const ContentBank& bank);

// Surviving arms get reward 1 (or the score drop when fractional is on),
// eliminated and failed pulls get 0, untouched arms stay untouched.
void assign_rewards(BanditState& state, const AttackTrace& minimized, bool fractional = false);

} // namespace pev
