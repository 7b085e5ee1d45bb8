#include "fedgrid/fedgrid.h"

#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <memory>
#include <new>
#include <string>

#include "fedgrid/crypto/paillier.hpp"
#include "fedgrid/error.hpp"
#include "fedgrid/harness/experiment.hpp"
#include "fedgrid/harness/metrics.hpp"

using namespace fedgrid;

struct fedgrid_experiment {
  std::unique_ptr<harness::Experiment> impl;
  fedgrid_log_fn log_fn = nullptr;
  void* log_user = nullptr;
};

struct fedgrid_keypair {
  crypto::KeyPair keys;
};

namespace {

thread_local std::string g_last_error;

fedgrid_status status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kCapacity:
      return FEDGRID_ERR_CONFIG;
    case ErrorCode::kParse:
    case ErrorCode::kValidation:
    case ErrorCode::kDimension:
    case ErrorCode::kIo:
    case ErrorCode::kKeyMismatch:
      return FEDGRID_ERR_DATA;
    case ErrorCode::kSingular:
    case ErrorCode::kNumeric:
    case ErrorCode::kBudgetExceeded:
      return FEDGRID_ERR_NUMERIC;
  }
  return FEDGRID_ERR_INTERNAL;
}

template <typename F>
fedgrid_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return FEDGRID_OK;
  } catch (const Error& e) {
    g_last_error = std::string(to_string(e.code())) + ": " + e.what();
    return status_for(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FEDGRID_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal: ") + e.what();
    return FEDGRID_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal: unknown exception";
    return FEDGRID_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
}

void copy_out(const std::string& s, char* buf, size_t len, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || len < s.size() + 1)
    throw Error(ErrorCode::kInvalidArgument, "buffer too small: need " + std::to_string(s.size() + 1) + " bytes");
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

harness::Experiment& exp_of(fedgrid_experiment* exp) {
  require(exp && exp->impl, "null experiment handle");
  return *exp->impl;
}

const harness::Experiment& exp_of(const fedgrid_experiment* exp) {
  require(exp && exp->impl, "null experiment handle");
  return *exp->impl;
}

}  // namespace

extern "C" {

const char* fedgrid_version(void) { return "1.0.0"; }

const char* fedgrid_status_name(fedgrid_status status) {
  switch (status) {
    case FEDGRID_OK: return "ok";
    case FEDGRID_ERR_INTERNAL: return "internal error";
    case FEDGRID_ERR_CONFIG: return "config error";
    case FEDGRID_ERR_DATA: return "data error";
    case FEDGRID_ERR_NUMERIC: return "numeric failure";
  }
  return "unknown status";
}

const char* fedgrid_last_error(void) { return g_last_error.c_str(); }

fedgrid_status fedgrid_experiment_open(const char* config_path, const char* workspace, int full_scale,
                                       fedgrid_experiment** out) {
  return guarded([&] {
    require(out != nullptr, "null output pointer");
    *out = nullptr;
    require(config_path != nullptr, "null config path");
    const auto ws = harness::Workspace::resolve(workspace ? std::optional<std::string>(workspace) : std::nullopt);
    auto cfg = harness::ExperimentConfig::load(ws(config_path));
    if (full_scale) cfg.use_full_sizes();
    auto handle = std::make_unique<fedgrid_experiment>();
    fedgrid_experiment* raw = handle.get();
    handle->impl = std::make_unique<harness::Experiment>(std::move(cfg), ws, [raw](const std::string& msg) {
      if (raw->log_fn) raw->log_fn(msg.c_str(), raw->log_user);
    });
    *out = handle.release();
  });
}

void fedgrid_experiment_close(fedgrid_experiment* exp) { delete exp; }

fedgrid_status fedgrid_experiment_set_logger(fedgrid_experiment* exp, fedgrid_log_fn fn, void* user) {
  return guarded([&] {
    exp_of(exp);
    exp->log_fn = fn;
    exp->log_user = user;
  });
}

fedgrid_status fedgrid_experiment_config_hash(const fedgrid_experiment* exp, char* buf, size_t len, size_t* needed) {
  return guarded([&] { copy_out(exp_of(exp).config().hash(), buf, len, needed); });
}

fedgrid_status fedgrid_experiment_output_dir(const fedgrid_experiment* exp, char* buf, size_t len, size_t* needed) {
  return guarded([&] { copy_out(exp_of(exp).output("").string(), buf, len, needed); });
}

fedgrid_status fedgrid_keygen(fedgrid_experiment* exp, unsigned prime_bits) {
  return guarded([&] { exp_of(exp).keygen(prime_bits ? std::optional<unsigned>(prime_bits) : std::nullopt); });
}

fedgrid_status fedgrid_generate_data(fedgrid_experiment* exp) {
  return guarded([&] { exp_of(exp).generate_data(); });
}

fedgrid_status fedgrid_train_local(fedgrid_experiment* exp, int with_ideal) {
  return guarded([&] { exp_of(exp).train_local(with_ideal != 0); });
}

fedgrid_status fedgrid_train_federated(fedgrid_experiment* exp) {
  return guarded([&] { exp_of(exp).train_federated(); });
}

fedgrid_status fedgrid_evaluate(fedgrid_experiment* exp) {
  return guarded([&] { exp_of(exp).evaluate(); });
}

fedgrid_status fedgrid_noise_sweep(fedgrid_experiment* exp, const char* model_kind) {
  return guarded([&] { exp_of(exp).noise_sweep(model_kind ? model_kind : "federated"); });
}

fedgrid_status fedgrid_report(fedgrid_experiment* exp) {
  return guarded([&] { exp_of(exp).report(); });
}

fedgrid_status fedgrid_compute_metrics(const int* predictions, const int* labels, size_t n, fedgrid_metrics* out) {
  return guarded([&] {
    require(out != nullptr, "null output pointer");
    require(n == 0 || (predictions && labels), "null input arrays");
    const auto m = harness::compute_metrics(std::vector<int>(predictions, predictions + n),
                                            std::vector<int>(labels, labels + n));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    *out = {m.counts.tp,
            m.counts.fp,
            m.counts.tn,
            m.counts.fn,
            m.accuracy.value_or(nan),
            m.precision.value_or(nan),
            m.recall.value_or(nan),
            m.f1.value_or(nan),
            m.accuracy.has_value(),
            m.precision.has_value(),
            m.recall.has_value(),
            m.f1.has_value()};
  });
}

fedgrid_status fedgrid_keypair_generate(unsigned prime_bits, uint64_t seed, fedgrid_keypair** out) {
  return guarded([&] {
    require(out != nullptr, "null output pointer");
    *out = nullptr;
    auto rng = seed ? crypto::RandomSource(seed) : crypto::RandomSource::from_entropy();
    *out = new fedgrid_keypair{crypto::generate_keypair(prime_bits, rng)};
  });
}

void fedgrid_keypair_free(fedgrid_keypair* keys) { delete keys; }

fedgrid_status fedgrid_keypair_id(const fedgrid_keypair* keys, char* buf, size_t len, size_t* needed) {
  return guarded([&] {
    require(keys != nullptr, "null keypair handle");
    copy_out(keys->keys.pub.key_id, buf, len, needed);
  });
}

fedgrid_status fedgrid_secure_average(const fedgrid_keypair* keys, const double* weights, size_t clients, size_t dims,
                                      double* out) {
  return guarded([&] {
    require(keys && weights && out, "null argument");
    require(clients > 0, "need at least one client");
    const crypto::EncodingParams enc;
    const auto& pub = keys->keys.pub;
    crypto::check_capacity(clients, enc, pub);
    auto rng = crypto::RandomSource::from_entropy();
    std::vector<crypto::Ciphertext> column(clients);
    for (size_t d = 0; d < dims; ++d) {
      for (size_t k = 0; k < clients; ++k) {
        const double w = weights[k * dims + d];
        if (!std::isfinite(w)) throw Error(ErrorCode::kNumeric, "non-finite weight at client " + std::to_string(k));
        column[k] = crypto::encrypt(crypto::encode(crypto::clip_weight(w, enc), enc), pub, rng);
      }
      const auto sum = crypto::aggregate(column, pub);
      out[d] = crypto::decode(crypto::decrypt(sum, keys->keys.priv, pub), clients, enc);
    }
  });
}

}  // extern "C"
