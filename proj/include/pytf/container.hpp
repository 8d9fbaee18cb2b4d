#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pytf/tensor.hpp"

namespace pytf {

// Named-tensor container ("PYTF1"):
//   magic "PYTF1" (5 bytes)
//   count            u64 LE
//   per tensor:
//     name length    u32 LE
//     name           UTF-8 bytes
//     rank           u32 LE
//     extents        rank x u64 LE
//     data           numel x f32 LE, row-major (last axis fastest)

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void write_container(std::ostream& os, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_container(std::istream& is);

void write_container_file(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_container_file(const std::string& path);

}  // namespace pytf
