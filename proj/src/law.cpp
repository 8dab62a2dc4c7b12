#include "cmr/law.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

bool lex_less(const Vector& a, const Vector& b) {
    for (int i = 0; i < a.size(); ++i) {
        if (a(i) < b(i)) return true;
        if (a(i) > b(i)) return false;
    }
    return false;
}

bool vec_equal(const Vector& a, const Vector& b) {
    return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

DiscreteLaw::DiscreteLaw(std::vector<Vector> support, Vector prob) {
    if (support.empty()) throw ContractViolation("law: empty support");
    if (static_cast<int>(support.size()) != prob.size()) {
        throw ContractViolation("law: support and probability sizes differ");
    }
    dim_ = static_cast<int>(support[0].size());
    if (dim_ == 0) throw ContractViolation("law: zero-dimensional points");
    for (const auto& z : support) {
        if (static_cast<int>(z.size()) != dim_) {
            throw ContractViolation("law: support points of mixed dimension");
        }
        if (!z.allFinite()) throw ContractViolation("law: non-finite support point");
    }
    for (int i = 0; i < prob.size(); ++i) {
        if (!(prob(i) > 0.0) || !std::isfinite(prob(i))) {
            throw ContractViolation("law: probabilities must be strictly positive");
        }
    }
    const double total = prob.sum();
    if (std::abs(total - 1.0) > 1e-9) {
        throw ContractViolation("law: probabilities must sum to one");
    }
    prob /= total;

    std::vector<int> order(support.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return lex_less(support[a], support[b]); });
    support_.reserve(support.size());
    prob_.resize(prob.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        support_.push_back(support[order[r]]);
        prob_(static_cast<int>(r)) = prob(order[r]);
    }
    for (int i = 0; i + 1 < size(); ++i) {
        if (vec_equal(support_[i], support_[i + 1])) {
            throw ContractViolation("law: duplicate support point");
        }
    }
}

int DiscreteLaw::find(const Vector& z) const {
    auto it = std::lower_bound(support_.begin(), support_.end(), z, lex_less);
    if (it != support_.end() && vec_equal(*it, z)) {
        return static_cast<int>(it - support_.begin());
    }
    return -1;
}

std::vector<double> subvector(const Vector& z, const std::vector<int>& cond) {
    std::vector<double> key;
    key.reserve(cond.size());
    for (int c : cond) key.push_back(z(c));
    return key;
}

Partition partition_by(const DiscreteLaw& law, std::vector<int> cond) {
    for (int c : cond) {
        if (c < 0 || c >= law.dim()) {
            throw ContractViolation("partition: conditioning index out of range");
        }
    }
    std::sort(cond.begin(), cond.end());
    if (std::adjacent_find(cond.begin(), cond.end()) != cond.end()) {
        throw ContractViolation("partition: duplicate conditioning index");
    }
    std::map<std::vector<double>, std::vector<int>> groups;
    for (int i = 0; i < law.size(); ++i) {
        groups[subvector(law.point(i), cond)].push_back(i);
    }
    Partition part;
    part.cond = std::move(cond);
    part.cell_of.assign(static_cast<std::size_t>(law.size()), -1);
    for (auto& [key, members] : groups) {
        const int c = part.cells();
        double p = 0.0;
        for (int i : members) {
            p += law.prob(i);
            part.cell_of[static_cast<std::size_t>(i)] = c;
        }
        part.keys.push_back(key);
        part.prob.push_back(p);
        part.members.push_back(std::move(members));
    }
    return part;
}

int Partition::find(const std::vector<double>& key) const {
    auto it = std::lower_bound(keys.begin(), keys.end(), key);
    if (it != keys.end() && *it == key) return static_cast<int>(it - keys.begin());
    return -1;
}

int Partition::nearest(const std::vector<double>& key) const {
    if (keys.empty()) throw ContractViolation("partition: nearest on empty partition");
    if (key.size() != keys[0].size()) {
        throw ContractViolation("partition: key dimension mismatch");
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cells(); ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < key.size(); ++i) {
            const double diff = keys[c][i] - key[i];
            d += diff * diff;
        }
        // Keys are lexicographically ordered, so on a tie the earlier cell wins.
        if (d < best_d) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

CondTable cond_expectation(const DiscreteLaw& law,
                           const std::function<Matrix(const Vector&)>& f,
                           const std::vector<int>& cond) {
    if (!f) throw ContractViolation("cond_expectation: empty function");
    CondTable table;
    table.part = partition_by(law, cond);
    table.value.reserve(static_cast<std::size_t>(table.part.cells()));
    for (int c = 0; c < table.part.cells(); ++c) {
        Matrix acc;
        for (int i : table.part.members[static_cast<std::size_t>(c)]) {
            const Matrix v = f(law.point(i));
            if (acc.size() == 0) {
                acc = Matrix::Zero(v.rows(), v.cols());
            } else if (v.rows() != acc.rows() || v.cols() != acc.cols()) {
                throw ContractViolation("cond_expectation: mixed value shapes");
            }
            acc += law.prob(i) * v;
        }
        table.value.push_back(acc / table.part.prob[static_cast<std::size_t>(c)]);
    }
    return table;
}

CondTable cond_variance(const DiscreteLaw& law,
                        const std::function<Vector(const Vector&)>& f,
                        const std::vector<int>& cond) {
    if (!f) throw ContractViolation("cond_variance: empty function");
    CondTable second = cond_expectation(
        law, [&](const Vector& z) -> Matrix {
            const Vector v = f(z);
            return v * v.transpose();
        },
        cond);
    CondTable mean = cond_expectation(
        law, [&](const Vector& z) -> Matrix { return f(z); }, cond);
    for (int c = 0; c < second.part.cells(); ++c) {
        const Matrix& m = mean.value[static_cast<std::size_t>(c)];
        second.value[static_cast<std::size_t>(c)] -= m * m.transpose();
    }
    return second;
}

Matrix expectation(const DiscreteLaw& law,
                   const std::function<Matrix(const Vector&)>& f) {
    return cond_expectation(law, f, {}).value.at(0);
}

namespace {

/// SplitMix64: the fixed seed-mixing step. Stable across platforms.
std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

SampleSet sample_from(const DiscreteLaw& law, int n, std::uint64_t seed) {
    if (n <= 0) throw ContractViolation("sample_from: n must be positive");
    std::vector<double> cdf(static_cast<std::size_t>(law.size()));
    double acc = 0.0;
    for (int i = 0; i < law.size(); ++i) {
        acc += law.prob(i);
        cdf[static_cast<std::size_t>(i)] = acc;
    }
    cdf.back() = 1.0;
    SampleSet sample;
    sample.seed = seed;
    sample.rows.reserve(static_cast<std::size_t>(n));
    std::uint64_t state = seed;
    for (int r = 0; r < n; ++r) {
        // 53-bit uniform in [0, 1); same bits on every platform.
        const double u =
            static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const int idx = std::min<int>(static_cast<int>(it - cdf.begin()),
                                      law.size() - 1);
        sample.rows.push_back(law.point(idx));
    }
    return sample;
}

DiscreteLaw empirical_law(const SampleSet& sample) {
    if (sample.rows.empty()) throw ContractViolation("empirical_law: empty sample");
    std::map<std::vector<double>, int> counts;
    for (const auto& row : sample.rows) {
        std::vector<double> key(row.data(), row.data() + row.size());
        ++counts[key];
    }
    std::vector<Vector> support;
    Vector prob(static_cast<int>(counts.size()));
    int c = 0;
    for (const auto& [key, count] : counts) {
        support.push_back(Eigen::Map<const Vector>(key.data(),
                                                   static_cast<int>(key.size())));
        prob(c++) = static_cast<double>(count) / static_cast<double>(sample.size());
    }
    return DiscreteLaw(std::move(support), std::move(prob));
}

void write_law(const DiscreteLaw& law, std::ostream& os) {
    os.precision(17);
    for (int i = 0; i < law.size(); ++i) {
        for (int c = 0; c < law.dim(); ++c) os << law.point(i)(c) << ' ';
        os << law.prob(i) << '\n';
    }
}

DiscreteLaw read_law(std::istream& is) {
    std::vector<Vector> support;
    std::vector<double> prob;
    std::string line;
    int dim = -1;
    while (std::getline(is, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream row(line);
        std::vector<double> values;
        double v;
        while (row >> v) values.push_back(v);
        if (values.size() < 2) {
            throw ContractViolation("law file: need at least one coordinate and a probability");
        }
        if (dim < 0) dim = static_cast<int>(values.size()) - 1;
        if (static_cast<int>(values.size()) != dim + 1) {
            throw ContractViolation("law file: inconsistent column count");
        }
        support.push_back(Eigen::Map<const Vector>(values.data(), dim));
        prob.push_back(values.back());
    }
    if (support.empty()) throw ContractViolation("law file: no rows");
    return DiscreteLaw(std::move(support),
                       Eigen::Map<const Vector>(prob.data(),
                                                static_cast<int>(prob.size())));
}

void save_law(const DiscreteLaw& law, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ContractViolation("save_law: cannot open " + path);
    write_law(law, os);
}

DiscreteLaw load_law(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ContractViolation("load_law: cannot open " + path);
    return read_law(is);
}

}  // namespace cmr
