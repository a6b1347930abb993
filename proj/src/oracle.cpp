#include "peevader/oracle.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <semaphore>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace pev {

namespace {

constexpr std::uint64_t kHashBasisA = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kHashBasisB = 0x84222325cbf29ce4ULL;

// benign section names the builtin scorer whitelists
const std::array<const char*, 5> kBenignNames = {".text", ".rdata", ".data", ".rsrc", ".reloc"};

bool printable_byte(std::uint8_t c) {
  return (c >= 0x20 && c <= 0x7e) || c == 0x09 || c == 0x0a || c == 0x0d;
}

double shannon_bits(ByteView b) {
  if (b.empty()) return 0.0;
  std::array<std::uint64_t, 256> counts{};
  for (std::uint8_t c : b) ++counts[c];
  double h = 0.0;
  const double n = static_cast<double>(b.size());
  for (std::uint64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

const BuiltinWeights& builtin_weights() {
  static const BuiltinWeights w;
  return w;
}

std::string builtin_weight_digest() {
  const BuiltinWeights& w = builtin_weights();
  char buf[160];
  std::snprintf(buf, sizeof buf, "entropy=%.6g,names=%.6g,overlay=%.6g,stub=%.6g,printable=%.6g,bias=%.6g",
                w.exec_entropy, w.nonstd_name_frac, w.overlay_frac, w.stub_modified,
                w.printable_frac, w.bias);
  return hex_u64(fnv1a64(ByteView(reinterpret_cast<const std::uint8_t*>(buf), std::strlen(buf))));
}

BuiltinFeatures compute_features(const PeImage& img) {
  BuiltinFeatures f;

  double entropy_sum = 0.0;
  std::size_t exec_count = 0;
  std::size_t nonstd = 0;
  for (const auto& s : img.sections()) {
    if (s.executable() && s.raw_size > 0) {
      entropy_sum += shannon_bits(ByteView(img.bytes().data() + s.raw_ptr, s.raw_size)) / 8.0;
      ++exec_count;
    }
    const std::string name = s.name_str();
    bool benign = false;
    for (const char* b : kBenignNames) benign = benign || name == b;
    if (!benign) ++nonstd;
  }
  f.exec_entropy = exec_count ? entropy_sum / static_cast<double>(exec_count) : 0.0;
  f.nonstd_name_frac =
      img.sections().empty() ? 0.0 : static_cast<double>(nonstd) / img.sections().size();
  f.overlay_frac = static_cast<double>(img.overlay_length()) / static_cast<double>(img.size());

  const ByteView canon = canonical_dos_region();
  bool canonical = img.dos().e_lfanew == 0x80 && img.size() >= 0x80;
  if (canonical)
    canonical = std::memcmp(img.bytes().data() + 2, canon.data() + 2, 0x3c - 2) == 0 &&
                std::memcmp(img.bytes().data() + 0x40, canon.data() + 0x40, 0x40) == 0;
  f.stub_modified = canonical ? 0.0 : 1.0;

  std::uint64_t printable = 0;
  for (std::uint8_t c : img.bytes())
    if (printable_byte(c)) ++printable;
  f.printable_frac = static_cast<double>(printable) / static_cast<double>(img.size());
  return f;
}

double builtin_score(const PeImage& img) {
  const BuiltinFeatures f = compute_features(img);
  const BuiltinWeights& w = builtin_weights();
  const double z = w.exec_entropy * f.exec_entropy + w.nonstd_name_frac * f.nonstd_name_frac +
                   w.overlay_frac * f.overlay_frac + w.stub_modified * f.stub_modified +
                   w.printable_frac * f.printable_frac + w.bias;
  return logistic(z);
}

OracleConfig OracleConfig::parse(const std::string& text) {
  OracleConfig cfg;
  if (text == "builtin") {
    cfg.backend = Backend::Builtin;
  } else if (text.rfind("cmd:", 0) == 0) {
    cfg.backend = Backend::Subprocess;
    cfg.command = text.substr(4);
    if (cfg.command.empty()) throw InvalidSpec("empty oracle command");
  } else if (text.rfind("http://", 0) == 0 || text.rfind("https://", 0) == 0) {
    cfg.backend = Backend::Http;
    cfg.url = text;
  } else {
    throw InvalidSpec("unknown oracle backend: " + text);
  }
  return cfg;
}

OracleClient::OracleClient(double threshold, bool cache)
    : threshold_(threshold), use_cache_(cache) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidSpec("threshold must be in (0, 1)");
}

Verdict OracleClient::classify(ByteView bytes) {
  queries_.fetch_add(1, std::memory_order_relaxed);
  const std::uint64_t h1 = fnv1a64(bytes, kHashBasisA);
  const std::uint64_t h2 = fnv1a64(bytes, kHashBasisB) ^ bytes.size();
  if (use_cache_) {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(h1);
    if (it != cache_.end() && it->second.first == h2)
      return {it->second.second, it->second.second >= threshold_, threshold_};
  }
  const double s = score_bytes(bytes);
  if (!(s >= 0.0 && s <= 1.0))
    throw MalformedResponse("score outside [0,1]: " + std::to_string(s));
  if (use_cache_) {
    std::lock_guard lock(cache_mu_);
    cache_[h1] = {h2, s};
  }
  return {s, s >= threshold_, threshold_};
}

namespace {

class BuiltinOracle final : public OracleClient {
public:
  BuiltinOracle(double threshold, bool cache) : OracleClient(threshold, cache) {}

protected:
  double score_bytes(ByteView bytes) override { return builtin_score(parse_pe(bytes)); }
};

// Caps concurrent backend invocations (spec default: 4).
class InflightGate {
public:
  explicit InflightGate(int limit) : sem_(std::clamp(limit, 1, 256)) {}
  struct Pass {
    std::counting_semaphore<256>& sem;
    ~Pass() { sem.release(); }
  };
  Pass enter() {
    sem_.acquire();
    return Pass{sem_};
  }

private:
  std::counting_semaphore<256> sem_;
};

struct TempFile {
  std::filesystem::path path;
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

std::atomic<std::uint64_t> g_temp_counter{0};

double parse_score_line(const std::string& out) {
  std::string line = out;
  if (auto nl = line.find('\n'); nl != std::string::npos) line.resize(nl);
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  if (line.rfind("score=", 0) != 0) throw MalformedResponse("expected `score=<decimal>`, got: " + line);
  const std::string num = line.substr(6);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(num.c_str(), &end);
  if (errno != 0 || end == num.c_str() || *end != '\0')
    throw MalformedResponse("unparseable score: " + line);
  return v;
}

class SubprocessOracle final : public OracleClient {
public:
  SubprocessOracle(std::string command, double threshold, bool cache, double timeout_s,
                   int max_inflight)
      : OracleClient(threshold, cache), command_(std::move(command)), timeout_s_(timeout_s),
        gate_(max_inflight) {}

protected:
  double score_bytes(ByteView bytes) override {
    auto pass = gate_.enter();

    TempFile tmp;
    tmp.path = std::filesystem::temp_directory_path() /
               ("peevader_" + std::to_string(::getpid()) + "_" +
                std::to_string(g_temp_counter.fetch_add(1)) + ".bin");
    {
      std::ofstream f(tmp.path, std::ios::binary | std::ios::trunc);
      if (!f) throw BackendUnavailable("cannot write candidate file");
      f.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
      if (!f) throw BackendUnavailable("short write to candidate file");
    }

    int fds[2];
    if (::pipe(fds) != 0) throw BackendUnavailable("pipe failed");
    const pid_t pid = ::fork();
    if (pid < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      throw BackendUnavailable("fork failed");
    }
    if (pid == 0) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      const std::string cmdline = command_ + " '" + tmp.path.string() + "'";
      ::execl("/bin/sh", "sh", "-c", cmdline.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);

    std::string out;
    bool timed_out = false;
    const auto deadline_ms = static_cast<long>(timeout_s_ * 1000.0);
    long waited_ms = 0;
    for (;;) {
      struct pollfd pfd = {fds[0], POLLIN, 0};
      const int step = 50;
      const int rc = ::poll(&pfd, 1, step);
      if (rc > 0) {
        char buf[4096];
        const ssize_t n = ::read(fds[0], buf, sizeof buf);
        if (n > 0) {
          out.append(buf, static_cast<std::size_t>(n));
          if (out.size() > 1 << 16) break; // a score line never needs this much
          continue;
        }
        break; // EOF
      }
      waited_ms += step;
      if (waited_ms >= deadline_ms) {
        timed_out = true;
        break;
      }
    }
    ::close(fds[0]);
    if (timed_out) ::kill(pid, SIGKILL);
    int status = 0;
    ::waitpid(pid, &status, 0);

    if (timed_out) throw BackendUnavailable("backend timed out");
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw BackendUnavailable("backend exited with status " +
                               std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
    return parse_score_line(out);
  }

private:
  std::string command_;
  double timeout_s_;
  InflightGate gate_;
};

class HttpOracle final : public OracleClient {
public:
  HttpOracle(std::string url, double threshold, bool cache, double timeout_s, int max_inflight)
      : OracleClient(threshold, cache), timeout_s_(timeout_s), gate_(max_inflight) {
    const auto scheme_end = url.find("://");
    const auto path_pos = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_pos == std::string::npos) {
      base_ = url;
      path_ = "/";
    } else {
      base_ = url.substr(0, path_pos);
      path_ = url.substr(path_pos);
    }
  }

protected:
  double score_bytes(ByteView bytes) override {
    auto pass = gate_.enter();

    httplib::Client cli(base_);
    const auto secs = std::max<time_t>(0, static_cast<time_t>(timeout_s_));
    const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);

    auto res = cli.Post(path_, reinterpret_cast<const char*>(bytes.data()), bytes.size(),
                        "application/octet-stream");
    if (!res) throw BackendUnavailable("http request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw BackendUnavailable("http status " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      if (!j.is_object() || !j.contains("score") || !j["score"].is_number())
        throw MalformedResponse("reply missing numeric `score`");
      return j["score"].get<double>();
    } catch (const nlohmann::json::exception&) {
      throw MalformedResponse("reply is not JSON");
    }
  }

private:
  std::string base_;
  std::string path_;
  double timeout_s_;
  InflightGate gate_;
};

} // namespace

std::unique_ptr<OracleClient> make_oracle(const OracleConfig& cfg) {
  double timeout = cfg.timeout_s;
  if (const char* env = std::getenv(kOracleTimeoutEnv)) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end != env && v > 0.0) timeout = v;
  }
  switch (cfg.backend) {
    case OracleConfig::Backend::Builtin:
      return std::make_unique<BuiltinOracle>(cfg.threshold, cfg.cache);
    case OracleConfig::Backend::Subprocess:
      return std::make_unique<SubprocessOracle>(cfg.command, cfg.threshold, cfg.cache, timeout,
                                                cfg.max_inflight);
    case OracleConfig::Backend::Http:
      return std::make_unique<HttpOracle>(cfg.url, cfg.threshold, cfg.cache, timeout,
                                          cfg.max_inflight);
  }
  throw InvalidSpec("unknown oracle backend");
}

FilterResult filter_dataset(const std::filesystem::path& dir, OracleClient& oracle) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  FilterResult result;
  for (const auto& path : files) {
    Bytes data;
    {
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        result.dropped.push_back({path, "read", 0.0});
        continue;
      }
      data.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    try {
      parse_pe(data);
    } catch (const MalformedPe&) {
      result.dropped.push_back({path, "parse", 0.0});
      continue;
    }
    try {
      const Verdict v = oracle.classify(data);
      if (v.detected)
        result.kept.push_back({path, v.score});
      else
        result.dropped.push_back({path, "score", v.score});
    } catch (const OracleFailure& e) {
      result.dropped.push_back({path, std::string("oracle: ") + e.what(), 0.0});
    }
  }
  return result;
}

} // namespace pev
