#pragma once

// Index-addressable point generators for the unit hypercube: a SplitMix64
// pseudo-random stream, the (optionally RR2-scrambled) Halton sequence and the
// Joe-Kuo Sobol' sequence with optional Matousek linear scrambling.
//
// Every generator maps a row index i to the sequence position
//     skip + i * (leap + 1)
// so "leap 100" keeps every 101st point. Rows can be produced in any order
// and from any thread; the result never depends on how they were requested.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace qmcssa {

enum class SequenceKind { pseudo, halton, sobol };
enum class Scramble { none, digit_permutation, linear_matrix };

std::string_view to_string(SequenceKind kind);
std::string_view to_string(Scramble scramble);
SequenceKind parse_sequence_kind(std::string_view text);
Scramble parse_scramble(std::string_view text);

/// Upper bound on the dimension of every generator; the size of the shipped
/// Sobol' direction-number table and of the Halton prime table.
inline constexpr std::size_t kMaxDimension = 1111;

struct SequenceSpec {
    SequenceKind kind = SequenceKind::pseudo;
    std::size_t dimension = 1;
    std::uint64_t skip = 0;
    std::uint64_t leap = 0;
    Scramble scramble = Scramble::none;
    std::uint64_t seed = 0;

    /// Absolute sequence position of row `row`.
    std::uint64_t effective_index(std::uint64_t row) const { return skip + row * (leap + 1); }

    /// Throws ConfigError for a zero or oversized dimension, or a scramble
    /// that does not apply to the kind (e.g. linear_matrix on Halton).
    void validate() const;

    bool operator==(const SequenceSpec&) const = default;
};

/// N x d row-major matrix of samples in [0,1)^d.
class UnitPointMatrix {
public:
    UnitPointMatrix() = default;
    UnitPointMatrix(SequenceSpec spec, std::size_t rows, std::vector<double> values);

    std::size_t rows() const { return rows_; }
    std::size_t dimension() const { return spec_.dimension; }
    const SequenceSpec& spec() const { return spec_; }
    /// Absolute sequence index of row 0.
    std::uint64_t index_origin() const { return spec_.effective_index(0); }

    std::span<const double> row(std::size_t i) const
    {
        return {values_.data() + i * dimension(), dimension()};
    }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * dimension() + j]; }
    std::span<const double> values() const { return values_; }

    /// Column j copied out.
    std::vector<double> column(std::size_t j) const;

    /// First `n` rows.
    UnitPointMatrix head(std::size_t n) const;

    bool operator==(const UnitPointMatrix&) const = default;

private:
    SequenceSpec spec_{};
    std::size_t rows_ = 0;
    std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Halton building blocks

/// Reflection of the base-`base` digits of `index` about the radix point.
/// Correctly rounded whenever base^digits stays below 2^53, which covers every
/// base-2 index below 2^53. Throws std::invalid_argument for base < 2.
double radical_inverse(std::uint64_t index, std::uint32_t base);

/// Radical inverse with `perm` applied to every digit (perm[0] must be 0).
double scrambled_radical_inverse(std::uint64_t index, std::uint32_t base,
                                 std::span<const std::uint32_t> perm);

/// Reverse-radix-2 (RR2) digit permutation: bit-reverse 0..2^k-1 within
/// k = ceil(log2 base) bits and keep the values below `base`. Fixes zero.
std::vector<std::uint32_t> digit_permutation_for_base(std::uint32_t base);

/// The first kMaxDimension primes, computed at compile time.
std::span<const std::uint32_t> halton_primes();

/// Halton coordinates (0-based) whose base divides leap + 1. Their lowest
/// digit is the same for every decimated point, so they cover only a
/// 1/base-wide slice of [0,1). Empty for other kinds.
std::vector<std::size_t> halton_degenerate_dimensions(const SequenceSpec& spec);

// ---------------------------------------------------------------------------
// Pseudo-random stream

/// SplitMix64 (Steele, Lea, Flood 2014). Period 2^64, passes BigCrush.
/// Draw k from seed s is mix(s + (k+1) * golden_gamma), so any position of the
/// stream can be read without walking it.
class SplitMix64 {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64()
    {
        state_ += kGamma;
        return mix(state_);
    }
    /// Top 53 bits scaled into [0,1).
    double next_double() { return to_unit(next_u64()); }

    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

    /// Draw number `position` (0-based) of the stream seeded with `seed`.
    static double at(std::uint64_t seed, std::uint64_t position)
    {
        return to_unit(mix(seed + (position + 1) * kGamma));
    }

private:
    std::uint64_t state_;
};

/// Stateful generator of doubles in [0,1), deterministic per seed.
inline SplitMix64 pseudo_uniform_stream(std::uint64_t seed) { return SplitMix64(seed); }

// ---------------------------------------------------------------------------
// Sobol'

/// Primitive-polynomial parameters and initial direction numbers in the
/// Joe-Kuo text format ("d s a m_1 ... m_s", one header line). Dimension 1 is
/// implicit (all m = 1).
class DirectionNumbers {
public:
    struct Entry {
        std::uint32_t degree = 0;       // s
        std::uint32_t coefficients = 0; // a
        std::vector<std::uint32_t> initial; // m_1..m_s
    };

    static DirectionNumbers parse(std::istream& in);
    static DirectionNumbers load(const std::filesystem::path& path);

    /// Highest dimension this table supports (entries + the implicit first).
    std::size_t max_dimension() const { return entries_.size() + 1; }
    /// Parameters for dimension `dim` (2-based as in the file).
    const Entry& entry(std::size_t dim) const { return entries_.at(dim - 2); }

private:
    std::vector<Entry> entries_;
};

/// Path used by default_direction_numbers(): the QMCSSA_DIRECTION_NUMBERS
/// environment variable if set, else the table shipped in the data directory.
std::filesystem::path default_direction_numbers_path();

/// Table loaded from `path` (or the default path), cached for the process.
const DirectionNumbers& default_direction_numbers();
const DirectionNumbers& direction_numbers_at(const std::filesystem::path& path);

/// Per-dimension direction vectors, 52 bits wide so that a point maps to an
/// exact double. Bit 51 carries the first binary digit after the point.
struct SobolTable {
    static constexpr int kBits = 52;
    using Column = std::array<std::uint64_t, kBits>;

    std::vector<Column> directions;   // directions[j][i]: index bit i of dimension j
    std::vector<std::uint64_t> shift; // digital shift per dimension (zero when unscrambled)

    std::size_t dimension() const { return directions.size(); }
    bool operator==(const SobolTable&) const = default;
};

/// Unscrambled direction vectors for the first `dimension` coordinates.
SobolTable build_sobol_table(const DirectionNumbers& numbers, std::size_t dimension);

/// Matousek affine scramble: every dimension's generator matrix C becomes L*C
/// with L random lower-triangular (unit diagonal), plus a random digital shift.
/// All randomness is drawn from SplitMix64(spec.seed).
SobolTable linear_matrix_scramble(const SequenceSpec& spec, const DirectionNumbers& numbers);
SobolTable linear_matrix_scramble(const SequenceSpec& spec);

// ---------------------------------------------------------------------------
// Generators

class HaltonSequence {
public:
    explicit HaltonSequence(SequenceSpec spec);
    const SequenceSpec& spec() const { return spec_; }
    void point(std::uint64_t row, std::span<double> out) const;

private:
    SequenceSpec spec_;
    std::vector<std::vector<std::uint32_t>> permutations_;
};

class SobolSequence {
public:
    SobolSequence(SequenceSpec spec, const DirectionNumbers& numbers);
    explicit SobolSequence(SequenceSpec spec);
    const SequenceSpec& spec() const { return spec_; }
    const SobolTable& table() const { return table_; }
    void point(std::uint64_t row, std::span<double> out) const;

private:
    SequenceSpec spec_;
    SobolTable table_;
};

/// Row i holds stream draws [p*d, p*d + d) with p = skip + i*(leap+1).
class PseudoSequence {
public:
    explicit PseudoSequence(SequenceSpec spec);
    const SequenceSpec& spec() const { return spec_; }
    void point(std::uint64_t row, std::span<double> out) const;

private:
    SequenceSpec spec_;
};

/// Any of the three generators behind one interface.
class PointGenerator {
public:
    explicit PointGenerator(const SequenceSpec& spec);
    PointGenerator(const SequenceSpec& spec, const DirectionNumbers& numbers);

    const SequenceSpec& spec() const;
    void point(std::uint64_t row, std::span<double> out) const;
    std::vector<double> point(std::uint64_t row) const;

private:
    std::variant<PseudoSequence, HaltonSequence, SobolSequence> impl_;
};

std::vector<double> halton_point(std::uint64_t row, const SequenceSpec& spec);
std::vector<double> sobol_point(std::uint64_t row, const SequenceSpec& spec);
std::vector<double> sobol_point(std::uint64_t row, const SequenceSpec& spec,
                                const DirectionNumbers& numbers);

UnitPointMatrix generate_matrix(const SequenceSpec& spec, std::size_t n_points);
UnitPointMatrix generate_matrix(const SequenceSpec& spec, std::size_t n_points,
                                const DirectionNumbers& numbers);

/// CSV with header "index,dim_1,...,dim_d"; values at 17 significant digits.
void write_points_csv(std::ostream& out, const UnitPointMatrix& points);

/// Reads a CSV written by write_points_csv (the index column is optional).
/// The returned matrix carries `spec` with its dimension taken from the file.
UnitPointMatrix read_points_csv(std::istream& in, SequenceSpec spec = {});

} // namespace qmcssa
