#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peevader/bandit.hpp"
#include "peevader/content_bank.hpp"
#include "peevader/oracle.hpp"

namespace pev {

struct CampaignConfig {
  std::filesystem::path dataset_dir;
  std::optional<std::filesystem::path> bank_path;
  OracleConfig oracle;
  SamplerKind sampler = SamplerKind::Thompson;
  int max_iterations = 20;
  std::vector<ActionKind> actions_enabled{kAllActionKinds.begin(), kAllActionKinds.end()};
  int max_actions_per_iteration = 1; // 0 = one selection per enabled arm
  std::uint64_t seed = 0;
  int workers = 1;
  bool fresh_bandit = false;        // reset bandit state per sample
  bool fractional_rewards = false;  // documented extension, off by default
  double ucb_c = 2.0;
  double prior_alpha = 1.0;
  double prior_beta = 1.0;
  std::optional<std::filesystem::path> output_dir; // unset = no files written
  std::map<ActionKind, std::vector<std::uint64_t>> menu_override; // test hook
};

struct SampleOutcome {
  std::string sample_id; // content hash of the original bytes
  std::filesystem::path path;
  double initial_score = 0.0;
  double final_score = 0.0; // best (lowest) score seen across iterations
  bool evaded = false;
  int iterations_used = 0;
  bool first_iteration_evasion = false;
  bool no_improvement = false; // final_score >= initial_score
  bool broken = false;         // a transform errored or equivalence failed
  std::vector<ActionSpec> minimized_actions;
  std::uint64_t queries = 0;
  std::string error; // oracle failure note, empty otherwise
};

struct ActionStats {
  std::uint64_t attacked = 0;
  std::uint64_t evaded = 0;
  std::uint64_t no_improvement = 0;
  std::uint64_t first_iteration = 0;
  double mean_iterations = 0.0; // over evaded samples
};

struct CampaignReport {
  SamplerKind sampler = SamplerKind::Thompson;
  std::uint64_t seed = 0;
  int max_iterations = 20;
  std::size_t dataset_size = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::vector<SampleOutcome> outcomes;
  std::map<ActionKind, ActionStats> per_action;
  std::vector<std::uint64_t> histogram; // index i = evaded at iteration i+1
  std::uint64_t total_queries = 0;
  std::vector<std::string> bandit_events;

  std::string csv() const;           // pinned schema, see kReportCsvHeader
  std::string summary() const;       // key-value text
  std::string histogram_csv() const; // `action,iteration,count`
};

inline constexpr const char* kReportCsvHeader =
    "sample,initial_score,final_score,evaded,iterations,first_iter,no_improve,broken,queries,"
    "actions";

// Attacks one detected sample: per iteration select arm(s), apply, verify
// equivalence (failure reverts the action and marks the sample broken),
// classify; stops early on evasion, then minimizes and assigns rewards.
// Oracle failures abort the sample (evaded=false, broken=false, error noted).
std::pair<SampleOutcome, AttackTrace> attack_sample(const PeImage& original,
                                                    const CampaignConfig& cfg,
                                                    BanditState& state, OracleClient& oracle,
                                                    const ContentBank& bank,
                                                    std::uint64_t sample_seed);

CampaignReport run_campaign(const CampaignConfig& cfg);
CampaignReport run_campaign(const CampaignConfig& cfg, OracleClient& oracle, int rounds = 1);

std::vector<std::uint64_t> iteration_histogram(const CampaignReport& report, ActionKind kind);

struct ComparisonReport {
  CampaignReport ucb1;
  CampaignReport thompson;

  // `sampler,event_index,cumulative_reward` rows from the bandit event logs
  std::string curves_csv() const;
  std::string summary() const;
};

// Runs the identical campaign (same seeds, same dataset passes) once per
// sampler. rounds = passes over the dataset with persistent bandit state.
ComparisonReport compare_samplers(const CampaignConfig& cfg, int rounds);
ComparisonReport compare_samplers(const CampaignConfig& cfg, OracleClient& oracle, int rounds);

} // namespace pev
