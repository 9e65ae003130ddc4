#pragma once

// CXA: the portable array container used for every image, k-space, field and
// tensor that crosses the CLI boundary.
//
//   offset 0   8 bytes  magic "CXA-ARRY"
//   offset 8   u32      format version (1)
//   offset 12  u32      reserved, 0
//   offset 16  u32      rank
//              u32[rank] sizes, slowest-varying first
//              u32      dtype tag
//              payload  little-endian, row-major; complex values interleaved (re, im)

#include "lapanet/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace lapanet {

enum class DType : uint32_t { f64 = 1, c128 = 2, i32 = 3, u8 = 4 };

inline constexpr uint32_t cxa_version = 1;

size_t dtype_size(DType t);

struct CxaArray {
    DType dtype = DType::f64;
    std::vector<uint32_t> dims;
    std::vector<unsigned char> payload;

    size_t element_count() const;
};

void write_cxa(std::ostream& os, const CxaArray& a);
CxaArray read_cxa(std::istream& is);
void write_cxa(const std::filesystem::path& path, const CxaArray& a);
CxaArray read_cxa(const std::filesystem::path& path);

CxaArray to_cxa(const CGrid& g);
CxaArray to_cxa(const RGrid& g);
CxaArray to_cxa(const LabelGrid& g);
/// rank 3: (2, H, W), channel 0 = ux, channel 1 = uy.
CxaArray to_cxa(const DisplacementField& u);
/// rank 3: (n_coils, H, W).
CxaArray to_cxa(const MultiCoil& m);
/// rank 3 stack of equally sized complex grids.
CxaArray to_cxa(const std::vector<CGrid>& stack);
CxaArray to_cxa(const std::vector<double>& values, const std::vector<uint32_t>& dims);

CGrid cxa_to_cgrid(const CxaArray& a);
RGrid cxa_to_rgrid(const CxaArray& a);
LabelGrid cxa_to_labels(const CxaArray& a);
DisplacementField cxa_to_field(const CxaArray& a);
MultiCoil cxa_to_multicoil(const CxaArray& a);
std::vector<double> cxa_to_doubles(const CxaArray& a);

} // namespace lapanet
