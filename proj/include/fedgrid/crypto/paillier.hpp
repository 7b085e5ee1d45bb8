#pragma once

#include <gmpxx.h>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedgrid::crypto {

using BigInt = mpz_class;

// Wraps a GMP Mersenne-Twister state. `from_entropy` seeds it with 256 bits
// from std::random_device; the seeded form exists for reproducible tests.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed);
  static RandomSource from_entropy();

  BigInt bits(unsigned count);               // uniform in [0, 2^count)
  BigInt below(const BigInt& bound);         // uniform in [0, bound)
  BigInt unit_mod(const BigInt& n);          // uniform in Z*_n

 private:
  RandomSource();
  std::unique_ptr<gmp_randclass> state_;
};

struct PublicKey {
  BigInt n;
  BigInt g;
  BigInt n_squared;
  std::string key_id;

  bool operator==(const PublicKey&) const = default;
};

struct PrivateKey {
  BigInt lambda;
  BigInt mu;
  std::string key_id;

  bool operator==(const PrivateKey&) const = default;
};

struct KeyPair {
  PublicKey pub;
  PrivateKey priv;
};

struct Ciphertext {
  BigInt value;
  std::string key_id;

  bool operator==(const Ciphertext&) const = default;
};

struct EncodingParams {
  double scale = 1e8;
  double shift = 16.0;
  double clip = 8.0;

  void validate() const;
};

bool is_probable_prime(const BigInt& candidate, int rounds, RandomSource& rng);
BigInt random_prime(unsigned bits, RandomSource& rng, int rounds = 40);

// L(u) = (u - 1) / n.
BigInt paillier_l(const BigInt& u, const BigInt& n);

// Default generator g = n + 1.
KeyPair generate_keypair(unsigned prime_bits, RandomSource& rng);
// Builds a key pair from given primes; `g` defaults to n + 1. Throws when the
// generator condition gcd(L(g^lambda mod n^2), n) = 1 fails.
KeyPair keypair_from_primes(const BigInt& p, const BigInt& q, std::optional<BigInt> g = {});
std::string derive_key_id(const BigInt& n);

double clip_weight(double w, const EncodingParams& params);
// floor(scale * (w + shift)); requires |w| <= clip.
BigInt encode(double w, const EncodingParams& params);
// Averages a decrypted K-client sum exactly, then undoes the shift.
double decode(const BigInt& sum, std::size_t clients, const EncodingParams& params);
// K * scale * (clip + shift) < n, else a capacity error.
void check_capacity(std::size_t clients, const EncodingParams& params, const PublicKey& pub);

Ciphertext encrypt(const BigInt& m, const PublicKey& pub, RandomSource& rng);
Ciphertext aggregate(const std::vector<Ciphertext>& ciphertexts, const PublicKey& pub);
BigInt decrypt(const Ciphertext& c, const PrivateKey& priv, const PublicKey& pub);

std::string to_hex(const BigInt& v);
BigInt from_hex(const std::string& hex);

nlohmann::json to_json(const PublicKey& pub);
nlohmann::json to_json(const PrivateKey& priv);
nlohmann::json to_json(const Ciphertext& c);
PublicKey public_key_from_json(const nlohmann::json& j);
PrivateKey private_key_from_json(const nlohmann::json& j);
Ciphertext ciphertext_from_json(const nlohmann::json& j);

}  // namespace fedgrid::crypto
