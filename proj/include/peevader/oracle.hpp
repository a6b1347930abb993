#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "peevader/bytes.hpp"
#include "peevader/errors.hpp"
#include "peevader/pe_model.hpp"

namespace pev {

struct Verdict {
  double score = 0.0;    // confidence the sample is malicious, in [0, 1]
  bool detected = false; // score >= threshold
  double threshold = 0.5;
};

struct OracleConfig {
  enum class Backend { Builtin, Subprocess, Http };

  Backend backend = Backend::Builtin;
  std::string command; // Subprocess: invoked as `command <path>`
  std::string url;     // Http: POST target
  double threshold = 0.5;
  double timeout_s = 10.0;
  bool cache = true; // memoize scores by content hash
  int max_inflight = 4;

  // "builtin" | "cmd:<command>" | "http://..." ; throws InvalidSpec
  static OracleConfig parse(const std::string& text);
};

// Uniform classifier interface. classify() is safe to call concurrently; the
// memo cache is internally synchronized and every call is counted toward the
// query budget.
class OracleClient {
public:
  virtual ~OracleClient() = default;

  Verdict classify(ByteView bytes);

  double threshold() const { return threshold_; }
  std::uint64_t queries() const { return queries_.load(); }

protected:
  OracleClient(double threshold, bool cache);

  // Returns a raw score; throws BackendUnavailable / MalformedResponse.
  virtual double score_bytes(ByteView bytes) = 0;

private:
  double threshold_;
  bool use_cache_;
  std::atomic<std::uint64_t> queries_{0};
  std::mutex cache_mu_;
  // keyed by one 64-bit content hash, a second independent hash guards collisions
  std::unordered_map<std::uint64_t, std::pair<std::uint64_t, double>> cache_;
};

std::unique_ptr<OracleClient> make_oracle(const OracleConfig& cfg);

// Deterministic static scorer standing in for an external model. Score is
// logistic(w.f + b) over five documented byte-level features; weights are
// fixed constants (see builtin_weights / README).
struct BuiltinFeatures {
  double exec_entropy = 0;      // mean byte entropy of executable sections / 8
  double nonstd_name_frac = 0;  // sections named outside the benign list
  double overlay_frac = 0;      // overlay length / file length
  double stub_modified = 0;     // 1 when the DOS region differs from canonical
  double printable_frac = 0;    // printable bytes / file length
};

struct BuiltinWeights {
  double exec_entropy = 2.0;
  double nonstd_name_frac = 1.2;
  double overlay_frac = 0.4;
  double stub_modified = 0.8;
  double printable_frac = -3.0;
  double bias = -1.75;
};

const BuiltinWeights& builtin_weights();
std::string builtin_weight_digest(); // cited by --version
BuiltinFeatures compute_features(const PeImage& img);
double builtin_score(const PeImage& img);

struct FilterResult {
  struct Kept {
    std::filesystem::path path;
    double score;
  };
  struct Dropped {
    std::filesystem::path path;
    std::string reason; // "parse", "score", "read", "oracle: ..."
    double score;       // meaningful for reason == "score"
  };
  std::vector<Kept> kept;
  std::vector<Dropped> dropped;
};

// Partitions a directory into detected samples and everything else; per-file
// failures land in dropped, never propagate.
FilterResult filter_dataset(const std::filesystem::path& dir, OracleClient& oracle);

inline constexpr const char* kOracleTimeoutEnv = "PEEVADER_ORACLE_TIMEOUT";

} // namespace pev
