#include "lapanet/cxa.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

static_assert(std::endian::native == std::endian::little, "CXA payload handling assumes a little-endian host");

namespace lapanet {

namespace {

constexpr std::array<char, 8> magic{'C', 'X', 'A', '-', 'A', 'R', 'R', 'Y'};

void put_u32(std::ostream& os, uint32_t v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t get_u32(std::istream& is)
{
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ValidationError("cxa: truncated header");
    return v;
}

template <class T>
CxaArray pack(DType dtype, std::vector<uint32_t> dims, const T* data, size_t count)
{
    CxaArray a;
    a.dtype = dtype;
    a.dims = std::move(dims);
    a.payload.resize(count * sizeof(T));
    std::memcpy(a.payload.data(), data, a.payload.size());
    return a;
}

void expect(const CxaArray& a, DType dtype, size_t rank, const char* what)
{
    if (a.dtype != dtype || a.dims.size() != rank)
        throw ValidationError(std::string("cxa: array is not a ") + what);
}

} // namespace

size_t dtype_size(DType t)
{
    switch (t) {
    case DType::f64:
        return 8;
    case DType::c128:
        return 16;
    case DType::i32:
        return 4;
    case DType::u8:
        return 1;
    }
    throw ValidationError("cxa: unknown dtype tag");
}

size_t CxaArray::element_count() const
{
    size_t n = 1;
    for (uint32_t d : dims)
        n *= d;
    return n;
}

void write_cxa(std::ostream& os, const CxaArray& a)
{
    if (a.payload.size() != a.element_count() * dtype_size(a.dtype))
        throw ValidationError("cxa: payload size does not match dims");
    os.write(magic.data(), magic.size());
    put_u32(os, cxa_version);
    put_u32(os, 0);
    put_u32(os, static_cast<uint32_t>(a.dims.size()));
    for (uint32_t d : a.dims)
        put_u32(os, d);
    put_u32(os, static_cast<uint32_t>(a.dtype));
    os.write(reinterpret_cast<const char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
    if (!os)
        throw RuntimeFailure("cxa: write failed");
}

CxaArray read_cxa(std::istream& is)
{
    std::array<char, 8> m{};
    if (!is.read(m.data(), m.size()) || m != magic)
        throw ValidationError("cxa: bad magic");
    const uint32_t version = get_u32(is);
    if (version != cxa_version)
        throw ValidationError("cxa: unsupported version " + std::to_string(version));
    get_u32(is);
    const uint32_t rank = get_u32(is);
    if (rank > 16)
        throw ValidationError("cxa: implausible rank");
    CxaArray a;
    for (uint32_t i = 0; i < rank; ++i)
        a.dims.push_back(get_u32(is));
    a.dtype = static_cast<DType>(get_u32(is));
    a.payload.resize(a.element_count() * dtype_size(a.dtype));
    if (!is.read(reinterpret_cast<char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size())))
        throw ValidationError("cxa: truncated payload");
    return a;
}

void write_cxa(const std::filesystem::path& path, const CxaArray& a)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw RuntimeFailure("cxa: cannot open " + path.string() + " for writing");
    write_cxa(os, a);
}

CxaArray read_cxa(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ValidationError("cxa: cannot open " + path.string());
    return read_cxa(is);
}

CxaArray to_cxa(const CGrid& g)
{
    return pack(DType::c128, {static_cast<uint32_t>(g.rows()), static_cast<uint32_t>(g.cols())}, g.data(),
                static_cast<size_t>(g.size()));
}

CxaArray to_cxa(const RGrid& g)
{
    return pack(DType::f64, {static_cast<uint32_t>(g.rows()), static_cast<uint32_t>(g.cols())}, g.data(),
                static_cast<size_t>(g.size()));
}

CxaArray to_cxa(const LabelGrid& g)
{
    return pack(DType::i32, {static_cast<uint32_t>(g.rows()), static_cast<uint32_t>(g.cols())}, g.data(),
                static_cast<size_t>(g.size()));
}

CxaArray to_cxa(const DisplacementField& u)
{
    std::vector<double> v(static_cast<size_t>(2 * u.ux.size()));
    std::memcpy(v.data(), u.ux.data(), sizeof(double) * u.ux.size());
    std::memcpy(v.data() + u.ux.size(), u.uy.data(), sizeof(double) * u.uy.size());
    return pack(DType::f64, {2, static_cast<uint32_t>(u.rows()), static_cast<uint32_t>(u.cols())}, v.data(), v.size());
}

CxaArray to_cxa(const std::vector<CGrid>& stack)
{
    if (stack.empty())
        return pack<cd>(DType::c128, {0, 0, 0}, nullptr, 0);
    const auto rows = stack.front().rows();
    const auto cols = stack.front().cols();
    std::vector<cd> v;
    v.reserve(static_cast<size_t>(rows * cols) * stack.size());
    for (const auto& g : stack) {
        if (g.rows() != rows || g.cols() != cols)
            throw ValidationError("cxa: stack members differ in shape");
        v.insert(v.end(), g.data(), g.data() + g.size());
    }
    return pack(DType::c128, {static_cast<uint32_t>(stack.size()), static_cast<uint32_t>(rows), static_cast<uint32_t>(cols)},
                v.data(), v.size());
}

CxaArray to_cxa(const MultiCoil& m)
{
    return to_cxa(m.coils);
}

CxaArray to_cxa(const std::vector<double>& values, const std::vector<uint32_t>& dims)
{
    CxaArray a = pack(DType::f64, dims, values.data(), values.size());
    if (a.element_count() != values.size())
        throw ValidationError("cxa: dims do not match value count");
    return a;
}

CGrid cxa_to_cgrid(const CxaArray& a)
{
    expect(a, DType::c128, 2, "complex 2D grid");
    CGrid g(a.dims[0], a.dims[1]);
    std::memcpy(g.data(), a.payload.data(), a.payload.size());
    return g;
}

RGrid cxa_to_rgrid(const CxaArray& a)
{
    expect(a, DType::f64, 2, "real 2D grid");
    RGrid g(a.dims[0], a.dims[1]);
    std::memcpy(g.data(), a.payload.data(), a.payload.size());
    return g;
}

LabelGrid cxa_to_labels(const CxaArray& a)
{
    expect(a, DType::i32, 2, "label grid");
    LabelGrid g(a.dims[0], a.dims[1]);
    std::memcpy(g.data(), a.payload.data(), a.payload.size());
    return g;
}

DisplacementField cxa_to_field(const CxaArray& a)
{
    expect(a, DType::f64, 3, "displacement field");
    if (a.dims[0] != 2)
        throw ValidationError("cxa: displacement field needs two channels");
    DisplacementField u(a.dims[1], a.dims[2]);
    const size_t plane = static_cast<size_t>(u.ux.size()) * sizeof(double);
    std::memcpy(u.ux.data(), a.payload.data(), plane);
    std::memcpy(u.uy.data(), a.payload.data() + plane, plane);
    return u;
}

MultiCoil cxa_to_multicoil(const CxaArray& a)
{
    expect(a, DType::c128, 3, "multi-coil stack");
    MultiCoil m;
    const size_t plane = static_cast<size_t>(a.dims[1]) * a.dims[2] * sizeof(cd);
    for (uint32_t c = 0; c < a.dims[0]; ++c) {
        CGrid g(a.dims[1], a.dims[2]);
        std::memcpy(g.data(), a.payload.data() + c * plane, plane);
        m.coils.push_back(std::move(g));
    }
    return m;
}

std::vector<double> cxa_to_doubles(const CxaArray& a)
{
    if (a.dtype != DType::f64)
        throw ValidationError("cxa: array is not real-valued");
    std::vector<double> v(a.element_count());
    std::memcpy(v.data(), a.payload.data(), a.payload.size());
    return v;
}

} // namespace lapanet
