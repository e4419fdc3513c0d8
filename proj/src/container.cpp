#include "mixrec/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mixrec {

static_assert(std::endian::native == std::endian::little,
              "container i/o assumes a little-endian host");

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

void Container::put_f64(const std::string& name, std::vector<std::size_t> shape,
                        std::vector<double> values) {
    if (values.size() != shape_numel(shape)) {
        throw DataError("container: array '" + name + "' size does not match shape");
    }
    entries_[name] = Entry{"f64", std::move(shape), std::move(values), {}};
}

void Container::put_i64(const std::string& name, std::vector<std::size_t> shape,
                        std::vector<std::int64_t> values) {
    if (values.size() != shape_numel(shape)) {
        throw DataError("container: array '" + name + "' size does not match shape");
    }
    entries_[name] = Entry{"i64", std::move(shape), {}, std::move(values)};
}

bool Container::has(const std::string& name) const { return entries_.count(name) != 0; }

const Container::Entry& Container::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DataError("container: missing array '" + name + "'");
    return it->second;
}

const std::vector<double>& Container::get_f64(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != "f64") throw DataError("container: array '" + name + "' is not f64");
    return e.f64;
}

const std::vector<std::int64_t>& Container::get_i64(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != "i64") throw DataError("container: array '" + name + "' is not i64");
    return e.i64;
}

const std::vector<std::size_t>& Container::shape(const std::string& name) const {
    return entry(name).shape;
}

std::vector<std::string> Container::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

void Container::save(const std::filesystem::path& path) const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
    auto arrays = nlohmann::json::array();
    for (const auto& [name, e] : entries_) {
        arrays.push_back({{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}});
    }
    manifest["arrays"] = arrays;
    const std::string manifest_str = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("container: cannot open '" + path.string() + "' for writing");
    out.write("MXRD", 4);
    const std::uint32_t version = kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t mlen = manifest_str.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    for (const auto& [name, e] : entries_) {
        if (e.dtype == "f64") {
            out.write(reinterpret_cast<const char*>(e.f64.data()),
                      static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
        } else {
            out.write(reinterpret_cast<const char*>(e.i64.data()),
                      static_cast<std::streamsize>(e.i64.size() * sizeof(std::int64_t)));
        }
    }
    if (!out) throw DataError("container: write failed for '" + path.string() + "'");
}

Container Container::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("container: cannot open '" + path.string() + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MXRD", 4) != 0) {
        throw DataError("container: bad magic in '" + path.string() + "'");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kFormatVersion) {
        throw DataError("container: unsupported format version " + std::to_string(version));
    }
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string manifest_str(mlen, '\0');
    in.read(manifest_str.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw DataError("container: truncated manifest in '" + path.string() + "'");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("container: manifest parse error: " + std::string(e.what()));
    }

    Container c;
    c.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& a : manifest.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const std::string dtype = a.at("dtype").get<std::string>();
        const auto shape = a.at("shape").get<std::vector<std::size_t>>();
        const std::size_t n = shape_numel(shape);
        if (dtype == "f64") {
            std::vector<double> values(n);
            in.read(reinterpret_cast<char*>(values.data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
            c.entries_[name] = Entry{"f64", shape, std::move(values), {}};
        } else if (dtype == "i64") {
            std::vector<std::int64_t> values(n);
            in.read(reinterpret_cast<char*>(values.data()),
                    static_cast<std::streamsize>(n * sizeof(std::int64_t)));
            c.entries_[name] = Entry{"i64", shape, {}, std::move(values)};
        } else {
            throw DataError("container: unknown dtype '" + dtype + "'");
        }
        if (!in) throw DataError("container: truncated array '" + name + "'");
    }
    return c;
}

}  // namespace mixrec
