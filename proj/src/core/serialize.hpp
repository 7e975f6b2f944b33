#ifndef CONVITAC_CORE_SERIALIZE_HPP
#define CONVITAC_CORE_SERIALIZE_HPP

#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace convitac {

// Binary tensor file: magic "CVT1", 1 byte dtype (0 = 32-bit real),
// 1 byte rank, rank x 32-bit little-endian unsigned dims, then raw
// little-endian values row-major. Round-trips are bit-exact.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Plain-text metadata, one key=value per line, written in insertion order.
using Metadata = std::vector<std::pair<std::string, std::string>>;
void write_metadata(const std::string& path, const Metadata& meta);
Metadata read_metadata(const std::string& path);
std::string meta_get(const Metadata& meta, const std::string& key);
std::string meta_get_or(const Metadata& meta, const std::string& key, const std::string& fallback);

}  // namespace convitac

#endif
