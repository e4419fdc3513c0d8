#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixrec/errors.hpp"

namespace mixrec {

// Versioned binary container: magic "MXRD", format version u32 LE, u64 LE
// manifest length, JSON manifest (named arrays with shapes/dtypes plus a
// free-form "meta" object), then the raw little-endian arrays in manifest
// order. Used both for prepared datasets and for checkpoints.
class Container {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    void put_f64(const std::string& name, std::vector<std::size_t> shape, std::vector<double> values);
    void put_i64(const std::string& name, std::vector<std::size_t> shape,
                 std::vector<std::int64_t> values);

    bool has(const std::string& name) const;
    const std::vector<double>& get_f64(const std::string& name) const;
    const std::vector<std::int64_t>& get_i64(const std::string& name) const;
    const std::vector<std::size_t>& shape(const std::string& name) const;
    std::vector<std::string> names() const;

    nlohmann::json meta;

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

private:
    struct Entry {
        std::string dtype;  // "f64" | "i64"
        std::vector<std::size_t> shape;
        std::vector<double> f64;
        std::vector<std::int64_t> i64;
    };
    const Entry& entry(const std::string& name) const;
    std::map<std::string, Entry> entries_;
};

}  // namespace mixrec
