#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmr/matrix_ops.hpp"

namespace cmr {

/// A probability law with finite support on R^q. Support points are kept in
/// lexicographic order; probabilities are strictly positive and sum to one.
class DiscreteLaw {
public:
    /// Empty law; a placeholder state for builders and containers only.
    DiscreteLaw() = default;

    DiscreteLaw(std::vector<Vector> support, Vector prob);

    int dim() const { return dim_; }
    int size() const { return static_cast<int>(support_.size()); }
    const Vector& point(int i) const { return support_[i]; }
    double prob(int i) const { return prob_[i]; }
    const std::vector<Vector>& support() const { return support_; }
    const Vector& probabilities() const { return prob_; }

    /// Index of an exact support point, -1 if absent.
    int find(const Vector& z) const;

private:
    std::vector<Vector> support_;
    Vector prob_;
    int dim_ = 0;
};

/// Grouping of the support by the values of a coordinate subset. An empty
/// coordinate set yields a single cell (marginal expectations). Cells are
/// ordered lexicographically by key; zero-probability cells cannot occur
/// because every support point has positive mass.
struct Partition {
    std::vector<int> cond;                   // sorted coordinate indices
    std::vector<std::vector<double>> keys;   // one key per cell
    std::vector<double> prob;                // cell probabilities
    std::vector<std::vector<int>> members;   // support indices per cell
    std::vector<int> cell_of;                // cell index per support point

    int cells() const { return static_cast<int>(keys.size()); }

    /// Exact key lookup, -1 if absent.
    int find(const std::vector<double>& key) const;

    /// Cell with the smallest Euclidean distance to `key`; ties resolved in
    /// favor of the lexicographically smaller key.
    int nearest(const std::vector<double>& key) const;
};

/// The values of coordinates `cond` at point z, in coordinate order.
std::vector<double> subvector(const Vector& z, const std::vector<int>& cond);

Partition partition_by(const DiscreteLaw& law, std::vector<int> cond);

/// A matrix per cell of a partition, all of one shape.
struct CondTable {
    Partition part;
    std::vector<Matrix> value;

    const Matrix& at_cell(int c) const { return value[c]; }
    /// Value at the cell containing support point index i.
    const Matrix& at_point(int i) const { return value[part.cell_of[i]]; }
};

/// Cellwise expectation of a matrix-valued function of Z.
CondTable cond_expectation(const DiscreteLaw& law,
                           const std::function<Matrix(const Vector&)>& f,
                           const std::vector<int>& cond);

/// Cellwise centered variance E[f f'|cell] - E[f|cell] E[f|cell]' of a
/// vector-valued function of Z.
CondTable cond_variance(const DiscreteLaw& law,
                        const std::function<Vector(const Vector&)>& f,
                        const std::vector<int>& cond);

/// Unconditional expectation of a matrix-valued function.
Matrix expectation(const DiscreteLaw& law,
                   const std::function<Matrix(const Vector&)>& f);

/// An i.i.d. sample of rows drawn from a finite-support law, together with
/// the seed it was drawn from (0 when the rows came from elsewhere).
struct SampleSet {
    std::vector<Vector> rows;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(rows.size()); }
    int dim() const { return rows.empty() ? 0 : static_cast<int>(rows[0].size()); }
};

/// Inverse-CDF sampling with a fixed 64-bit generator; bit-reproducible for
/// a given seed within one build.
SampleSet sample_from(const DiscreteLaw& law, int n, std::uint64_t seed);

/// The empirical law of a sample: distinct rows with relative frequencies.
DiscreteLaw empirical_law(const SampleSet& sample);

/// Columnar text format: one support point per line, probability last.
/// Blank lines and lines starting with '#' are ignored on read.
void write_law(const DiscreteLaw& law, std::ostream& os);
DiscreteLaw read_law(std::istream& is);
void save_law(const DiscreteLaw& law, const std::string& path);
DiscreteLaw load_law(const std::string& path);

}  // namespace cmr
