#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dpap/tensor.hpp"

namespace dpap {

/// Versioned container of named arrays with an explicit manifest
/// (name, element type, shape, byte offset) ahead of the payloads.
/// Entries are kept name-sorted so saving is deterministic and
/// save -> load -> save reproduces the file byte for byte. Payloads are
/// little-endian; the element type is declared per array so both 32-bit and
/// 64-bit training state round-trip exactly.
class Checkpoint {
  public:
    static constexpr std::uint32_t kVersion = 1;

    struct Entry {
        char dtype = 'f';  // 'f' float32, 'd' float64, 'q' int64, 'B' byte
        Shape shape;
        std::vector<unsigned char> bytes;
    };

    static size_t dtype_size(char d) {
        switch (d) {
            case 'f': return 4;
            case 'd': return 8;
            case 'q': return 8;
            case 'B': return 1;
            default: fail(std::string("unknown checkpoint element type '") + d + "'");
        }
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : entries_) out.push_back(k);
        return out;
    }

    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        DPAP_CHECK(it != entries_.end(), "checkpoint has no array named '" << name << "'");
        return it->second;
    }

    template <typename Scalar>
    void put(const std::string& name, const Tensor<Scalar>& t) {
        static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
        Entry e;
        e.dtype = std::is_same_v<Scalar, float> ? 'f' : 'd';
        e.shape = t.shape();
        e.bytes.resize(t.size() * sizeof(Scalar));
        std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
        insert(name, std::move(e));
    }

    void put_i64(const std::string& name, const std::vector<std::int64_t>& v) {
        Entry e;
        e.dtype = 'q';
        e.shape = {static_cast<int>(v.size())};
        e.bytes.resize(v.size() * 8);
        std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
        insert(name, std::move(e));
    }

    void put_scalar_i64(const std::string& name, std::int64_t v) { put_i64(name, {v}); }

    void put_text(const std::string& name, const std::string& text) {
        Entry e;
        e.dtype = 'B';
        e.shape = {static_cast<int>(text.size())};
        e.bytes.assign(text.begin(), text.end());
        insert(name, std::move(e));
    }

    template <typename Scalar>
    Tensor<Scalar> get(const std::string& name) const {
        static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
        const Entry& e = entry(name);
        const char want = std::is_same_v<Scalar, float> ? 'f' : 'd';
        DPAP_CHECK(e.dtype == want, "checkpoint array '" << name << "' holds type '" << e.dtype
                                                         << "', requested '" << want << "'");
        Tensor<Scalar> t(e.shape);
        std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
        return t;
    }

    std::vector<std::int64_t> get_i64(const std::string& name) const {
        const Entry& e = entry(name);
        DPAP_CHECK(e.dtype == 'q', "checkpoint array '" << name << "' holds type '" << e.dtype
                                                        << "', requested 'q'");
        std::vector<std::int64_t> v(e.bytes.size() / 8);
        std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
        return v;
    }

    std::int64_t get_scalar_i64(const std::string& name) const {
        const auto v = get_i64(name);
        DPAP_CHECK(v.size() == 1, "checkpoint array '" << name << "' holds " << v.size()
                                                       << " values, expected 1");
        return v[0];
    }

    std::string get_text(const std::string& name) const {
        const Entry& e = entry(name);
        DPAP_CHECK(e.dtype == 'B', "checkpoint array '" << name << "' holds type '" << e.dtype
                                                        << "', requested text");
        return std::string(e.bytes.begin(), e.bytes.end());
    }

    /// Writes the container to a temporary sibling file and renames it into
    /// place, so an interrupted save never leaves a half-written checkpoint.
    void save(const std::string& path) const {
        std::vector<unsigned char> blob = serialize();
        const std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            DPAP_CHECK(f.good(), "cannot write checkpoint '" << tmp << "'");
            f.write(reinterpret_cast<const char*>(blob.data()),
                    static_cast<std::streamsize>(blob.size()));
            DPAP_CHECK(f.good(), "short write to checkpoint '" << tmp << "'");
        }
        std::filesystem::rename(tmp, path);
    }

    /// Parses and fully validates the manifest before any entry is exposed;
    /// a corrupt file throws and yields no partially loaded container.
    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        DPAP_CHECK(f.good(), "cannot open checkpoint '" << path << "'");
        std::vector<unsigned char> blob(std::istreambuf_iterator<char>(f),
                                        std::istreambuf_iterator<char>{});
        return deserialize(blob, path);
    }

    std::vector<unsigned char> serialize() const {
        std::vector<unsigned char> out;
        auto w32 = [&](std::uint32_t v) {
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
        };
        auto w64 = [&](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
        };
        out.insert(out.end(), kMagic, kMagic + 8);
        w32(kVersion);
        w32(static_cast<std::uint32_t>(entries_.size()));
        // Manifest size is computable up front, so payload offsets are
        // absolute file positions.
        std::uint64_t offset = 16;
        for (const auto& [name, e] : entries_)
            offset += 2 + name.size() + 1 + 1 + 4 * e.shape.size() + 8 + 8;
        for (const auto& [name, e] : entries_) {
            out.push_back(static_cast<unsigned char>(name.size() & 0xff));
            out.push_back(static_cast<unsigned char>(name.size() >> 8));
            out.insert(out.end(), name.begin(), name.end());
            out.push_back(static_cast<unsigned char>(e.dtype));
            out.push_back(static_cast<unsigned char>(e.shape.size()));
            for (int d : e.shape) w32(static_cast<std::uint32_t>(d));
            w64(offset);
            w64(e.bytes.size());
            offset += e.bytes.size();
        }
        for (const auto& [name, e] : entries_)
            out.insert(out.end(), e.bytes.begin(), e.bytes.end());
        return out;
    }

    static Checkpoint deserialize(const std::vector<unsigned char>& blob,
                                  const std::string& what) {
        size_t pos = 0;
        auto need = [&](size_t n) {
            DPAP_CHECK(pos + n <= blob.size(), "checkpoint '" << what << "' truncated at byte "
                                                              << pos << " (wanted " << n
                                                              << " more)");
        };
        auto r32 = [&]() {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) v |= std::uint32_t(blob[pos++]) << (8 * i);
            return v;
        };
        auto r64 = [&]() {
            need(8);
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= std::uint64_t(blob[pos++]) << (8 * i);
            return v;
        };
        need(8);
        DPAP_CHECK(std::memcmp(blob.data(), kMagic, 8) == 0,
                   "'" << what << "' is not a checkpoint file");
        pos = 8;
        const std::uint32_t version = r32();
        DPAP_CHECK(version == kVersion, "checkpoint '" << what << "' has version " << version
                                                       << ", supported version is " << kVersion);
        const std::uint32_t count = r32();
        struct Pending {
            std::string name;
            Entry e;
            std::uint64_t offset = 0, size = 0;
        };
        std::vector<Pending> pending;
        for (std::uint32_t i = 0; i < count; ++i) {
            Pending p;
            need(2);
            const size_t nlen = blob[pos] | (size_t(blob[pos + 1]) << 8);
            pos += 2;
            need(nlen);
            p.name.assign(blob.begin() + pos, blob.begin() + pos + nlen);
            pos += nlen;
            need(2);
            p.e.dtype = static_cast<char>(blob[pos++]);
            const int rank = blob[pos++];
            std::uint64_t elems = 1;
            for (int d = 0; d < rank; ++d) {
                const std::uint32_t dim = r32();
                DPAP_CHECK(dim > 0, "checkpoint '" << what << "' array '" << p.name
                                                   << "' has a zero extent");
                p.e.shape.push_back(static_cast<int>(dim));
                elems *= dim;
            }
            p.offset = r64();
            p.size = r64();
            DPAP_CHECK(p.size == elems * dtype_size(p.e.dtype),
                       "checkpoint '" << what << "' array '" << p.name << "': manifest size "
                                      << p.size << " does not match its shape");
            pending.push_back(std::move(p));
        }
        std::uint64_t expect = pos;
        for (const auto& p : pending) {
            DPAP_CHECK(p.offset == expect, "checkpoint '" << what << "' array '" << p.name
                                                          << "': offset " << p.offset
                                                          << " does not follow the manifest");
            expect += p.size;
        }
        DPAP_CHECK(expect == blob.size(), "checkpoint '" << what << "': payload ends at byte "
                                                         << expect << " but the file has "
                                                         << blob.size());
        Checkpoint ck;
        for (auto& p : pending) {
            p.e.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(p.offset),
                             blob.begin() + static_cast<std::ptrdiff_t>(p.offset + p.size));
            ck.insert(p.name, std::move(p.e));
        }
        return ck;
    }

  private:
    static constexpr const char kMagic[9] = "DPAPCKPT";

    void insert(const std::string& name, Entry e) {
        DPAP_CHECK(!name.empty() && name.size() < 65536, "invalid checkpoint array name");
        DPAP_CHECK(!entries_.count(name), "duplicate checkpoint array '" << name << "'");
        entries_[name] = std::move(e);
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace dpap
