#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace slowtransfer {

// Error hierarchy. Each subsystem throws the most specific type; callers that
// only care about "something went wrong" catch slowtransfer::Error.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class DegenerateDataError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

class OutOfReachError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// 64-bit FNV-1a. Used for parameter hashes, config hashes and artifact
// checksums; not a cryptographic digest.
class Fnv1a {
public:
    void update(std::span<const std::byte> bytes) {
        for (std::byte b : bytes) {
            state_ ^= static_cast<std::uint64_t>(b);
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view text) {
        update(std::as_bytes(std::span<const char>(text.data(), text.size())));
    }
    template <class T>
    void update_values(std::span<const T> values) {
        update(std::as_bytes(values));
    }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

// Derives an independent stream seed from a base seed and a salt (splitmix64).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

// Keeps large training buffers on the heap instead of mmap/munmap per batch.
// No-op outside glibc. Call once from main().
void configure_allocator();

}  // namespace slowtransfer
