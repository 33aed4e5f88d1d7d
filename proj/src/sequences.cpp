#include "qmcssa/sequences.hpp"

#include "qmcssa/csv.hpp"
#include "qmcssa/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#ifndef QMCSSA_DATA_DIR
#define QMCSSA_DATA_DIR "data"
#endif

namespace qmcssa {

std::string_view to_string(SequenceKind kind)
{
    switch (kind) {
    case SequenceKind::pseudo: return "pseudo";
    case SequenceKind::halton: return "halton";
    case SequenceKind::sobol: return "sobol";
    }
    return "?";
}

std::string_view to_string(Scramble scramble)
{
    switch (scramble) {
    case Scramble::none: return "none";
    case Scramble::digit_permutation: return "digit_permutation";
    case Scramble::linear_matrix: return "linear_matrix";
    }
    return "?";
}

SequenceKind parse_sequence_kind(std::string_view text)
{
    if (text == "pseudo") return SequenceKind::pseudo;
    if (text == "halton") return SequenceKind::halton;
    if (text == "sobol") return SequenceKind::sobol;
    throw ConfigError(fmt::format("unknown sequence kind '{}' (expected pseudo, halton or sobol)", text));
}

Scramble parse_scramble(std::string_view text)
{
    if (text == "none") return Scramble::none;
    if (text == "digit_permutation" || text == "rr2") return Scramble::digit_permutation;
    if (text == "linear_matrix" || text == "matousek_affine_owen") return Scramble::linear_matrix;
    throw ConfigError(fmt::format(
        "unknown scramble '{}' (expected none, digit_permutation or linear_matrix)", text));
}

void SequenceSpec::validate() const
{
    if (dimension < 1)
        throw ConfigError("sequence dimension must be at least 1");
    if (dimension > kMaxDimension)
        throw ConfigError(fmt::format("sequence dimension {} exceeds the supported limit of {}",
                                      dimension, kMaxDimension));
    if (leap == std::numeric_limits<std::uint64_t>::max())
        throw ConfigError("leap is too large");
    switch (kind) {
    case SequenceKind::pseudo:
        if (scramble != Scramble::none)
            throw ConfigError("pseudo-random sequences take no scramble");
        break;
    case SequenceKind::halton:
        if (scramble == Scramble::linear_matrix)
            throw ConfigError("halton supports scramble none or digit_permutation");
        break;
    case SequenceKind::sobol:
        if (scramble == Scramble::digit_permutation)
            throw ConfigError("sobol supports scramble none or linear_matrix");
        break;
    }
}

UnitPointMatrix::UnitPointMatrix(SequenceSpec spec, std::size_t rows, std::vector<double> values)
    : spec_(spec), rows_(rows), values_(std::move(values))
{
    if (values_.size() != rows_ * spec_.dimension)
        throw std::invalid_argument("point matrix size does not match rows x dimension");
}

std::vector<double> UnitPointMatrix::column(std::size_t j) const
{
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        out[i] = (*this)(i, j);
    return out;
}

UnitPointMatrix UnitPointMatrix::head(std::size_t n) const
{
    n = std::min(n, rows_);
    return UnitPointMatrix(spec_, n,
                           std::vector<double>(values_.begin(),
                                               values_.begin() + static_cast<std::ptrdiff_t>(n * dimension())));
}

// ---------------------------------------------------------------------------
// Halton

namespace {

constexpr std::uint64_t kExactLimit = 1ULL << 53;

constexpr auto kPrimes = [] {
    std::array<std::uint32_t, kMaxDimension> primes{};
    std::size_t count = 0;
    for (std::uint32_t candidate = 2; count < primes.size(); ++candidate) {
        bool prime = true;
        for (std::size_t k = 0; k < count && primes[k] * primes[k] <= candidate; ++k) {
            if (candidate % primes[k] == 0) {
                prime = false;
                break;
            }
        }
        if (prime)
            primes[count++] = candidate;
    }
    return primes;
}();

// Shared body of the plain and permuted radical inverse. The leading digits
// are gathered into an exact integer numerator over base^n (n as large as
// keeps base^n <= 2^53); anything left is at most one ulp of the result and is
// folded in with Horner's rule.
template <typename DigitMap>
double radical_inverse_impl(std::uint64_t index, std::uint32_t base, DigitMap&& map)
{
    std::uint64_t numerator = 0;
    std::uint64_t denominator = 1;
    while (index > 0 && denominator <= kExactLimit / base) {
        numerator = numerator * base + map(static_cast<std::uint32_t>(index % base));
        index /= base;
        denominator *= base;
    }
    if (index == 0)
        return static_cast<double>(numerator) / static_cast<double>(denominator);

    std::array<std::uint32_t, 64> tail_digits{};
    std::size_t count = 0;
    while (index > 0) {
        tail_digits[count++] = map(static_cast<std::uint32_t>(index % base));
        index /= base;
    }
    double tail = 0.0;
    while (count > 0)
        tail = (tail + tail_digits[--count]) / base;
    const double value = (static_cast<double>(numerator) + tail) / static_cast<double>(denominator);
    return value < 1.0 ? value : std::nextafter(1.0, 0.0);
}

} // namespace

std::span<const std::uint32_t> halton_primes()
{
    return kPrimes;
}

std::vector<std::size_t> halton_degenerate_dimensions(const SequenceSpec& spec)
{
    std::vector<std::size_t> dims;
    if (spec.kind != SequenceKind::halton)
        return dims;
    const std::uint64_t step = spec.leap + 1;
    const std::size_t d = std::min<std::size_t>(spec.dimension, kPrimes.size());
    for (std::size_t j = 0; j < d; ++j) {
        if (step % kPrimes[j] == 0)
            dims.push_back(j);
    }
    return dims;
}

double radical_inverse(std::uint64_t index, std::uint32_t base)
{
    if (base < 2)
        throw std::invalid_argument(fmt::format("radical inverse base must be >= 2, got {}", base));
    return radical_inverse_impl(index, base, [](std::uint32_t d) { return d; });
}

double scrambled_radical_inverse(std::uint64_t index, std::uint32_t base,
                                 std::span<const std::uint32_t> perm)
{
    if (base < 2)
        throw std::invalid_argument(fmt::format("radical inverse base must be >= 2, got {}", base));
    if (perm.size() != base || perm[0] != 0)
        throw std::invalid_argument("digit permutation must have one entry per digit and fix zero");
    return radical_inverse_impl(index, base, [perm](std::uint32_t d) { return perm[d]; });
}

std::vector<std::uint32_t> digit_permutation_for_base(std::uint32_t base)
{
    if (base < 2)
        throw std::invalid_argument(fmt::format("digit permutation base must be >= 2, got {}", base));
    const unsigned bits = std::bit_width(base - 1);
    std::vector<std::uint32_t> perm;
    perm.reserve(base);
    for (std::uint32_t j = 0; j < (1U << bits); ++j) {
        std::uint32_t reversed = 0;
        for (unsigned b = 0; b < bits; ++b)
            reversed |= ((j >> b) & 1U) << (bits - 1 - b);
        if (reversed < base)
            perm.push_back(reversed);
    }
    return perm;
}

HaltonSequence::HaltonSequence(SequenceSpec spec) : spec_(spec)
{
    if (spec_.kind != SequenceKind::halton)
        throw ConfigError("HaltonSequence requires kind halton");
    spec_.validate();
    if (spec_.scramble == Scramble::digit_permutation) {
        permutations_.reserve(spec_.dimension);
        for (std::size_t j = 0; j < spec_.dimension; ++j)
            permutations_.push_back(digit_permutation_for_base(kPrimes[j]));
    }
}

void HaltonSequence::point(std::uint64_t row, std::span<double> out) const
{
    const std::uint64_t index = spec_.effective_index(row);
    for (std::size_t j = 0; j < spec_.dimension; ++j) {
        out[j] = permutations_.empty() ? radical_inverse(index, kPrimes[j])
                                       : scrambled_radical_inverse(index, kPrimes[j], permutations_[j]);
    }
}

// ---------------------------------------------------------------------------
// Sobol'

DirectionNumbers DirectionNumbers::parse(std::istream& in)
{
    DirectionNumbers table;
    std::string line;
    std::size_t line_no = 0;
    while (csv::read_line(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string first;
        if (!(fields >> first))
            continue;
        const auto dim = csv::parse_int(first);
        if (!dim) {
            if (line_no == 1)
                continue; // "d s a m_i" header
            throw ConfigError(fmt::format("direction numbers line {}: expected a dimension", line_no));
        }
        const auto expected = static_cast<long long>(table.entries_.size() + 2);
        if (*dim != expected)
            throw ConfigError(fmt::format("direction numbers line {}: dimension {} out of order (expected {})",
                                          line_no, *dim, expected));
        Entry entry;
        if (!(fields >> entry.degree >> entry.coefficients) || entry.degree == 0 || entry.degree > 31)
            throw ConfigError(fmt::format("direction numbers line {}: bad degree/coefficients", line_no));
        for (std::uint32_t i = 0; i < entry.degree; ++i) {
            std::uint32_t m = 0;
            if (!(fields >> m))
                throw ConfigError(fmt::format("direction numbers line {}: expected {} initial values",
                                              line_no, entry.degree));
            if (m % 2 == 0 || m >= (1U << (i + 1)))
                throw ConfigError(fmt::format(
                    "direction numbers line {}: m_{} = {} must be odd and below 2^{}", line_no, i + 1, m, i + 1));
            entry.initial.push_back(m);
        }
        table.entries_.push_back(std::move(entry));
    }
    return table;
}

DirectionNumbers DirectionNumbers::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot open direction numbers file '{}'", path.string()));
    return parse(in);
}

std::filesystem::path default_direction_numbers_path()
{
    if (const char* env = std::getenv("QMCSSA_DIRECTION_NUMBERS"); env && *env)
        return env;
    return std::filesystem::path(QMCSSA_DATA_DIR) / "new-joe-kuo-6.1111";
}

const DirectionNumbers& direction_numbers_at(const std::filesystem::path& path)
{
    static std::mutex mutex;
    static std::map<std::string, std::unique_ptr<DirectionNumbers>> cache;
    const std::lock_guard lock(mutex);
    auto& slot = cache[path.string()];
    if (!slot)
        slot = std::make_unique<DirectionNumbers>(DirectionNumbers::load(path));
    return *slot;
}

const DirectionNumbers& default_direction_numbers()
{
    return direction_numbers_at(default_direction_numbers_path());
}

SobolTable build_sobol_table(const DirectionNumbers& numbers, std::size_t dimension)
{
    constexpr int L = SobolTable::kBits;
    if (dimension > numbers.max_dimension())
        throw ConfigError(fmt::format("sobol dimension {} exceeds the direction-number table limit of {}",
                                      dimension, numbers.max_dimension()));
    SobolTable table;
    table.directions.resize(dimension);
    table.shift.assign(dimension, 0);

    auto& first = table.directions[0];
    for (int i = 0; i < L; ++i)
        first[i] = 1ULL << (L - 1 - i);

    for (std::size_t j = 1; j < dimension; ++j) {
        const auto& entry = numbers.entry(j + 1);
        const int s = static_cast<int>(entry.degree);
        const std::uint32_t a = entry.coefficients;
        auto& v = table.directions[j];
        for (int i = 0; i < std::min(s, L); ++i)
            v[i] = static_cast<std::uint64_t>(entry.initial[i]) << (L - 1 - i);
        for (int i = s; i < L; ++i) {
            v[i] = v[i - s] ^ (v[i - s] >> s);
            for (int k = 1; k < s; ++k) {
                if ((a >> (s - 1 - k)) & 1U)
                    v[i] ^= v[i - k];
            }
        }
    }
    return table;
}

SobolTable linear_matrix_scramble(const SequenceSpec& spec, const DirectionNumbers& numbers)
{
    constexpr int L = SobolTable::kBits;
    constexpr std::uint64_t kDigitMask = (1ULL << L) - 1;

    SobolTable table = build_sobol_table(numbers, spec.dimension);
    SplitMix64 rng(spec.seed);
    std::array<std::uint64_t, L> lower{};
    for (std::size_t j = 0; j < table.dimension(); ++j) {
        // Row r of L: digits 0..r-1 random, digit r set. Digit r sits at bit L-1-r.
        for (int r = 0; r < L; ++r) {
            const std::uint64_t above_diagonal = kDigitMask & ~((1ULL << (L - r)) - 1);
            lower[r] = (rng.next_u64() & above_diagonal) | (1ULL << (L - 1 - r));
        }
        for (auto& column : table.directions[j]) {
            std::uint64_t scrambled = 0;
            for (int r = 0; r < L; ++r) {
                if (std::popcount(lower[r] & column) & 1)
                    scrambled |= 1ULL << (L - 1 - r);
            }
            column = scrambled;
        }
        table.shift[j] = rng.next_u64() & kDigitMask;
    }
    return table;
}

SobolTable linear_matrix_scramble(const SequenceSpec& spec)
{
    return linear_matrix_scramble(spec, default_direction_numbers());
}

SobolSequence::SobolSequence(SequenceSpec spec, const DirectionNumbers& numbers) : spec_(spec)
{
    if (spec_.kind != SequenceKind::sobol)
        throw ConfigError("SobolSequence requires kind sobol");
    spec_.validate();
    table_ = spec_.scramble == Scramble::linear_matrix ? linear_matrix_scramble(spec_, numbers)
                                                       : build_sobol_table(numbers, spec_.dimension);
}

SobolSequence::SobolSequence(SequenceSpec spec) : SobolSequence(spec, default_direction_numbers()) {}

void SobolSequence::point(std::uint64_t row, std::span<double> out) const
{
    const std::uint64_t index = spec_.effective_index(row);
    if (index >= (1ULL << SobolTable::kBits))
        throw std::out_of_range("sobol index exceeds 2^52");
    const std::uint64_t gray = index ^ (index >> 1);
    for (std::size_t j = 0; j < spec_.dimension; ++j) {
        std::uint64_t x = table_.shift[j];
        const auto& v = table_.directions[j];
        for (std::uint64_t bits = gray; bits != 0; bits &= bits - 1)
            x ^= v[std::countr_zero(bits)];
        out[j] = static_cast<double>(x) * 0x1.0p-52;
    }
}

// ---------------------------------------------------------------------------
// Pseudo-random

PseudoSequence::PseudoSequence(SequenceSpec spec) : spec_(spec)
{
    if (spec_.kind != SequenceKind::pseudo)
        throw ConfigError("PseudoSequence requires kind pseudo");
    spec_.validate();
}

void PseudoSequence::point(std::uint64_t row, std::span<double> out) const
{
    const std::uint64_t first = spec_.effective_index(row) * spec_.dimension;
    for (std::size_t j = 0; j < spec_.dimension; ++j)
        out[j] = SplitMix64::at(spec_.seed, first + j);
}

// ---------------------------------------------------------------------------

namespace {

std::variant<PseudoSequence, HaltonSequence, SobolSequence> make_impl(const SequenceSpec& spec,
                                                                      const DirectionNumbers* numbers)
{
    switch (spec.kind) {
    case SequenceKind::pseudo: return PseudoSequence(spec);
    case SequenceKind::halton: return HaltonSequence(spec);
    case SequenceKind::sobol:
        return numbers ? SobolSequence(spec, *numbers) : SobolSequence(spec);
    }
    throw ConfigError("unknown sequence kind");
}

} // namespace

PointGenerator::PointGenerator(const SequenceSpec& spec) : impl_(make_impl(spec, nullptr)) {}

PointGenerator::PointGenerator(const SequenceSpec& spec, const DirectionNumbers& numbers)
    : impl_(make_impl(spec, &numbers))
{
}

const SequenceSpec& PointGenerator::spec() const
{
    return std::visit([](const auto& g) -> const SequenceSpec& { return g.spec(); }, impl_);
}

void PointGenerator::point(std::uint64_t row, std::span<double> out) const
{
    if (out.size() != spec().dimension)
        throw std::invalid_argument("output span does not match the sequence dimension");
    std::visit([&](const auto& g) { g.point(row, out); }, impl_);
}

std::vector<double> PointGenerator::point(std::uint64_t row) const
{
    std::vector<double> out(spec().dimension);
    point(row, out);
    return out;
}

std::vector<double> halton_point(std::uint64_t row, const SequenceSpec& spec)
{
    std::vector<double> out(spec.dimension);
    HaltonSequence(spec).point(row, out);
    return out;
}

std::vector<double> sobol_point(std::uint64_t row, const SequenceSpec& spec, const DirectionNumbers& numbers)
{
    std::vector<double> out(spec.dimension);
    SobolSequence(spec, numbers).point(row, out);
    return out;
}

std::vector<double> sobol_point(std::uint64_t row, const SequenceSpec& spec)
{
    return sobol_point(row, spec, default_direction_numbers());
}

namespace {

UnitPointMatrix fill_matrix(const PointGenerator& generator, std::size_t n_points)
{
    if (n_points == 0)
        throw std::invalid_argument("n_points must be at least 1");
    const auto& spec = generator.spec();
    std::vector<double> values(n_points * spec.dimension);
    for (std::size_t i = 0; i < n_points; ++i)
        generator.point(i, std::span<double>(values.data() + i * spec.dimension, spec.dimension));
    return UnitPointMatrix(spec, n_points, std::move(values));
}

} // namespace

UnitPointMatrix generate_matrix(const SequenceSpec& spec, std::size_t n_points)
{
    return fill_matrix(PointGenerator(spec), n_points);
}

UnitPointMatrix generate_matrix(const SequenceSpec& spec, std::size_t n_points, const DirectionNumbers& numbers)
{
    return fill_matrix(PointGenerator(spec, numbers), n_points);
}

void write_points_csv(std::ostream& out, const UnitPointMatrix& points)
{
    out << "index";
    for (std::size_t j = 0; j < points.dimension(); ++j)
        out << ",dim_" << (j + 1);
    out << '\n';
    for (std::size_t i = 0; i < points.rows(); ++i) {
        out << i;
        for (double v : points.row(i))
            out << ',' << csv::format_double(v);
        out << '\n';
    }
}

UnitPointMatrix read_points_csv(std::istream& in, SequenceSpec spec)
{
    std::string line;
    if (!csv::read_line(in, line))
        throw ConfigError("points CSV is empty");
    const auto header = csv::split(line);
    const bool has_index = !header.empty() && csv::trim(header[0]) == "index";
    const std::size_t dim = header.size() - (has_index ? 1 : 0);
    if (dim == 0)
        throw ConfigError("points CSV has no dim_ columns");
    spec.dimension = dim;

    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (csv::trim(line).empty())
            continue;
        const auto fields = csv::split(line);
        if (fields.size() != header.size())
            throw ConfigError(fmt::format("points CSV line {}: expected {} fields, got {}", line_no,
                                          header.size(), fields.size()));
        for (std::size_t j = has_index ? 1 : 0; j < fields.size(); ++j) {
            const auto v = csv::parse_double(fields[j]);
            if (!v)
                throw ConfigError(fmt::format("points CSV line {}: bad number '{}'", line_no, fields[j]));
            values.push_back(*v);
        }
        ++rows;
    }
    return UnitPointMatrix(spec, rows, std::move(values));
}

} // namespace qmcssa
