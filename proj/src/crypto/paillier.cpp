#include "fedgrid/crypto/paillier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "fedgrid/error.hpp"
#include "fedgrid/util/digest.hpp"

namespace fedgrid::crypto {

namespace {

constexpr std::array<unsigned, 24> kSmallPrimes = {3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                                   43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

BigInt gcd(const BigInt& a, const BigInt& b) {
  BigInt r;
  mpz_gcd(r.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
  return r;
}

BigInt powm(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  BigInt r;
  mpz_powm(r.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return r;
}

void require_key(const std::string& a, const std::string& b, const char* what) {
  if (a != b) throw Error(ErrorCode::kKeyMismatch, std::string(what) + ": key id mismatch");
}

}  // namespace

RandomSource::RandomSource() : state_(std::make_unique<gmp_randclass>(gmp_randinit_mt)) {}

RandomSource::RandomSource(std::uint64_t seed) : RandomSource() {
  state_->seed(BigInt(std::to_string(seed)));
}

RandomSource RandomSource::from_entropy() {
  std::random_device dev;
  BigInt seed = 0;
  for (int i = 0; i < 8; ++i) {
    seed <<= 32;
    seed += static_cast<unsigned long>(dev());
  }
  RandomSource rs;
  rs.state_->seed(seed);
  return rs;
}

BigInt RandomSource::bits(unsigned count) { return state_->get_z_bits(count); }

BigInt RandomSource::below(const BigInt& bound) {
  if (bound <= 0) throw Error(ErrorCode::kInvalidArgument, "random bound must be positive");
  return state_->get_z_range(bound);
}

BigInt RandomSource::unit_mod(const BigInt& n) {
  for (;;) {
    BigInt r = below(n);
    if (r != 0 && gcd(r, n) == 1) return r;
  }
}

bool is_probable_prime(const BigInt& candidate, int rounds, RandomSource& rng) {
  if (candidate < 2) return false;
  if (candidate < 4) return true;
  if (mpz_even_p(candidate.get_mpz_t())) return false;
  for (unsigned sp : kSmallPrimes) {
    if (candidate == sp) return true;
    if (mpz_divisible_ui_p(candidate.get_mpz_t(), sp)) return false;
  }
  // candidate - 1 = d * 2^s with d odd
  const BigInt n_minus_1 = candidate - 1;
  BigInt d = n_minus_1;
  unsigned s = 0;
  while (mpz_even_p(d.get_mpz_t())) {
    d >>= 1;
    ++s;
  }
  const BigInt span = candidate - 3;
  for (int round = 0; round < rounds; ++round) {
    const BigInt a = rng.below(span) + 2;  // a in [2, n-2]
    BigInt x = powm(a, d, candidate);
    if (x == 1 || x == n_minus_1) continue;
    bool composite = true;
    for (unsigned r = 1; r < s; ++r) {
      x = x * x % candidate;
      if (x == n_minus_1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

BigInt random_prime(unsigned bits, RandomSource& rng, int rounds) {
  if (bits < 8) throw Error(ErrorCode::kInvalidArgument, "prime size must be at least 8 bits");
  for (;;) {
    BigInt c = rng.bits(bits);
    // Top two bits set so the product of two such primes has exactly 2*bits bits.
    mpz_setbit(c.get_mpz_t(), bits - 1);
    mpz_setbit(c.get_mpz_t(), bits - 2);
    mpz_setbit(c.get_mpz_t(), 0);
    if (is_probable_prime(c, rounds, rng)) return c;
  }
}

BigInt paillier_l(const BigInt& u, const BigInt& n) {
  if (n <= 0) throw Error(ErrorCode::kInvalidArgument, "L requires n > 0");
  BigInt r;
  mpz_divexact(r.get_mpz_t(), BigInt(u - 1).get_mpz_t(), n.get_mpz_t());
  return r;
}

std::string derive_key_id(const BigInt& n) { return util::sha1_hex(to_hex(n)).substr(0, 16); }

KeyPair keypair_from_primes(const BigInt& p, const BigInt& q, std::optional<BigInt> g) {
  if (p < 2 || q < 2 || p == q) throw Error(ErrorCode::kInvalidArgument, "need two distinct primes");
  const BigInt n = p * q;
  const BigInt p1 = p - 1, q1 = q - 1;
  if (gcd(n, p1 * q1) != 1)
    throw Error(ErrorCode::kInvalidArgument, "gcd(pq, (p-1)(q-1)) must be 1");
  BigInt lambda;
  mpz_lcm(lambda.get_mpz_t(), p1.get_mpz_t(), q1.get_mpz_t());
  const BigInt n2 = n * n;
  const BigInt gen = g ? *g : BigInt(n + 1);
  if (gen <= 0 || gen >= n2 || gcd(gen, n) != 1)
    throw Error(ErrorCode::kInvalidArgument, "generator must lie in Z*_{n^2}");
  const BigInt u = powm(gen, lambda, n2);
  if ((u - 1) % n != 0) throw Error(ErrorCode::kInvalidArgument, "generator order not divisible by n");
  const BigInt l = paillier_l(u, n);
  BigInt mu;
  if (mpz_invert(mu.get_mpz_t(), l.get_mpz_t(), n.get_mpz_t()) == 0)
    throw Error(ErrorCode::kInvalidArgument, "gcd(L(g^lambda mod n^2), n) != 1");
  KeyPair kp;
  kp.pub = {n, gen, n2, derive_key_id(n)};
  kp.priv = {lambda, mu, kp.pub.key_id};
  return kp;
}

KeyPair generate_keypair(unsigned prime_bits, RandomSource& rng) {
  if (prime_bits < 16) throw Error(ErrorCode::kInvalidArgument, "prime_bits must be >= 16");
  for (;;) {
    const BigInt p = random_prime(prime_bits, rng);
    const BigInt q = random_prime(prime_bits, rng);
    if (p == q || gcd(p * q, (p - 1) * (q - 1)) != 1) continue;
    return keypair_from_primes(p, q);
  }
}

void EncodingParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw Error(ErrorCode::kInvalidArgument, "encoding scale must be positive");
  if (!(clip > 0.0) || !std::isfinite(clip))
    throw Error(ErrorCode::kInvalidArgument, "clip bound must be positive");
  if (!(shift > clip) || !std::isfinite(shift))
    throw Error(ErrorCode::kInvalidArgument, "encoding shift must exceed the clip bound");
}

double clip_weight(double w, const EncodingParams& params) {
  if (!std::isfinite(w)) throw Error(ErrorCode::kNumeric, "non-finite weight");
  return std::clamp(w, -params.clip, params.clip);
}

BigInt encode(double w, const EncodingParams& params) {
  if (!std::isfinite(w) || std::abs(w) > params.clip)
    throw Error(ErrorCode::kCapacity, "weight outside the clip bound");
  BigInt out;
  mpz_set_d(out.get_mpz_t(), std::floor(params.scale * (w + params.shift)));
  return out;
}

double decode(const BigInt& sum, std::size_t clients, const EncodingParams& params) {
  if (clients == 0) throw Error(ErrorCode::kInvalidArgument, "decode needs at least one client");
  // Exact m/K; the scale is a power of ten so dividing in double loses at most an ulp.
  mpq_class mean(sum, BigInt(static_cast<unsigned long>(clients)));
  mean.canonicalize();
  return mean.get_d() / params.scale - params.shift;
}

void check_capacity(std::size_t clients, const EncodingParams& params, const PublicKey& pub) {
  params.validate();
  BigInt bound;
  mpz_set_d(bound.get_mpz_t(), std::ceil(params.scale * (params.clip + params.shift)));
  bound *= static_cast<unsigned long>(clients);
  if (bound >= pub.n)
    throw Error(ErrorCode::kCapacity, "K * scale * (clip + shift) = " + bound.get_str() +
                                          " does not fit below n");
}

Ciphertext encrypt(const BigInt& m, const PublicKey& pub, RandomSource& rng) {
  if (m < 0 || m >= pub.n) throw Error(ErrorCode::kCapacity, "plaintext outside [0, n)");
  const BigInt r = rng.unit_mod(pub.n);
  BigInt gm;
  if (pub.g == pub.n + 1)
    gm = (1 + m * pub.n) % pub.n_squared;
  else
    gm = powm(pub.g, m, pub.n_squared);
  return {gm * powm(r, pub.n, pub.n_squared) % pub.n_squared, pub.key_id};
}

Ciphertext aggregate(const std::vector<Ciphertext>& ciphertexts, const PublicKey& pub) {
  if (ciphertexts.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to aggregate");
  BigInt acc = 1;
  for (const auto& c : ciphertexts) {
    require_key(c.key_id, pub.key_id, "aggregate");
    acc = acc * c.value % pub.n_squared;
  }
  return {acc, pub.key_id};
}

BigInt decrypt(const Ciphertext& c, const PrivateKey& priv, const PublicKey& pub) {
  require_key(c.key_id, pub.key_id, "decrypt");
  require_key(priv.key_id, pub.key_id, "decrypt");
  if (c.value <= 0 || c.value >= pub.n_squared || gcd(c.value, pub.n) != 1)
    throw Error(ErrorCode::kInvalidArgument, "ciphertext is not a unit mod n^2");
  BigInt m = paillier_l(powm(c.value, priv.lambda, pub.n_squared), pub.n) * priv.mu % pub.n;
  return m;
}

std::string to_hex(const BigInt& v) {
  if (v < 0) throw Error(ErrorCode::kInvalidArgument, "negative value has no hex form");
  return v.get_str(16);
}

BigInt from_hex(const std::string& hex) {
  if (hex.empty() || hex.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
    throw Error(ErrorCode::kParse, "invalid hex integer '" + hex + "'");
  return BigInt(hex, 16);
}

nlohmann::json to_json(const PublicKey& pub) {
  return {{"type", "paillier-public"}, {"key_id", pub.key_id}, {"n", to_hex(pub.n)}, {"g", to_hex(pub.g)}};
}

nlohmann::json to_json(const PrivateKey& priv) {
  return {{"type", "paillier-private"},
          {"key_id", priv.key_id},
          {"lambda", to_hex(priv.lambda)},
          {"mu", to_hex(priv.mu)}};
}

nlohmann::json to_json(const Ciphertext& c) { return {{"key_id", c.key_id}, {"value", to_hex(c.value)}}; }

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  if (!j.is_object() || !j.contains(name) || !j.at(name).is_string())
    throw Error(ErrorCode::kParse, std::string("missing string field '") + name + "'");
  return j.at(name);
}

}  // namespace

PublicKey public_key_from_json(const nlohmann::json& j) {
  PublicKey pub;
  pub.n = from_hex(field(j, "n").get<std::string>());
  pub.g = from_hex(field(j, "g").get<std::string>());
  pub.n_squared = pub.n * pub.n;
  pub.key_id = field(j, "key_id").get<std::string>();
  if (pub.key_id != derive_key_id(pub.n))
    throw Error(ErrorCode::kKeyMismatch, "public key id does not match its modulus");
  return pub;
}

PrivateKey private_key_from_json(const nlohmann::json& j) {
  PrivateKey priv;
  priv.lambda = from_hex(field(j, "lambda").get<std::string>());
  priv.mu = from_hex(field(j, "mu").get<std::string>());
  priv.key_id = field(j, "key_id").get<std::string>();
  return priv;
}

Ciphertext ciphertext_from_json(const nlohmann::json& j) {
  return {from_hex(field(j, "value").get<std::string>()), field(j, "key_id").get<std::string>()};
}

}  // namespace fedgrid::crypto
