#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "gwib/data.hpp"
#include "gwib/matrix_io.hpp"

namespace gwib {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

scalar_t parse_number(const std::string& s, index_t row) {
    scalar_t v;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{})
        throw ParseError("bad number '" + s + "' at data row " + std::to_string(row));
    return v;
}

// Deterministic Fisher-Yates so shuffles do not depend on the standard
// library's std::shuffle implementation.
std::vector<index_t> shuffled_indices(index_t n, std::uint64_t seed) {
    std::vector<index_t> idx(n);
    for (index_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (index_t i = n - 1; i > 0; --i) {
        const index_t j = static_cast<index_t>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

}  // namespace

Cohort load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty file: " + path);
    const auto header = split_fields(line);

    // Covariate columns are "<prefix>0".."<prefix>{d-1}", located by name so
    // column order in the file does not matter.
    std::vector<int> x_pos;
    int t_pos = -1, y_pos = -1, mu0_pos = -1, mu1_pos = -1;
    for (std::size_t col = 0; col < header.size(); ++col) {
        const std::string& name = header[col];
        if (name == schema.t_col) t_pos = static_cast<int>(col);
        else if (name == schema.y_col) y_pos = static_cast<int>(col);
        else if (name == schema.mu0_col) mu0_pos = static_cast<int>(col);
        else if (name == schema.mu1_col) mu1_pos = static_cast<int>(col);
    }
    for (index_t d = 0;; ++d) {
        const std::string want = schema.x_prefix + std::to_string(d);
        const auto it = std::find(header.begin(), header.end(), want);
        if (it == header.end()) break;
        x_pos.push_back(static_cast<int>(it - header.begin()));
    }
    if (x_pos.empty()) throw SchemaError("no covariate columns '" + schema.x_prefix + "0'...: " + path);
    if (t_pos < 0) throw SchemaError("missing column '" + schema.t_col + "': " + path);
    if (y_pos < 0) throw SchemaError("missing column '" + schema.y_col + "': " + path);
    const bool has_mu = mu0_pos >= 0 && mu1_pos >= 0;
    if ((mu0_pos >= 0) != (mu1_pos >= 0))
        throw SchemaError("mu0/mu1 must both be present or both absent: " + path);

    Cohort samples;
    index_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw ParseError("row " + std::to_string(row) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(header.size()) + ": " + path);
        CohortSample s;
        s.x = vector_t(static_cast<index_t>(x_pos.size()));
        for (std::size_t d = 0; d < x_pos.size(); ++d)
            s.x[static_cast<index_t>(d)] = parse_number(fields[x_pos[d]], row);
        const scalar_t traw = parse_number(fields[t_pos], row);
        if (traw != 0.0 && traw != 1.0)
            throw ParseError("treatment must be 0 or 1 at data row " + std::to_string(row));
        s.t = static_cast<int>(traw);
        s.y_factual = parse_number(fields[y_pos], row);
        if (has_mu) {
            s.mu0 = parse_number(fields[mu0_pos], row);
            s.mu1 = parse_number(fields[mu1_pos], row);
            if (!std::isfinite(*s.mu0) || !std::isfinite(*s.mu1))
                throw ParseError("non-finite potential outcome at data row " +
                                 std::to_string(row));
        }
        samples.push_back(std::move(s));
        ++row;
    }
    if (samples.empty()) throw SchemaError("no data rows: " + path);
    return samples;
}

void write_csv(const std::string& path, const Cohort& samples) {
    if (samples.empty()) throw InvalidInput("write_csv: no samples");
    const index_t dim = samples.front().x.size();
    const bool has_mu = samples.front().mu0.has_value();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (index_t d = 0; d < dim; ++d) out << "x" << d << ",";
    out << "t,y_factual";
    if (has_mu) out << ",mu0,mu1";
    out << "\n";
    for (const auto& s : samples) {
        if (s.x.size() != dim) throw InvalidInput("write_csv: inconsistent dimensions");
        for (index_t d = 0; d < dim; ++d) out << format_double(s.x[d]) << ",";
        out << s.t << "," << format_double(s.y_factual);
        if (has_mu) {
            if (!s.mu0 || !s.mu1) throw InvalidInput("write_csv: inconsistent mu columns");
            out << "," << format_double(*s.mu0) << "," << format_double(*s.mu1);
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

void SplitSpec::validate() const {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw InvalidInput("SplitSpec: fractions must sum to 1");
    if (train_frac < 0 || val_frac < 0 || test_frac < 0)
        throw InvalidInput("SplitSpec: fractions must be nonnegative");
}

Splits split(const Cohort& samples, const SplitSpec& spec) {
    spec.validate();
    const index_t n = static_cast<index_t>(samples.size());
    if (n < 10) throw InvalidInput("split: need at least 10 samples");
    const index_t n_val = static_cast<index_t>(std::llround(spec.val_frac * n));
    const index_t n_test = static_cast<index_t>(std::llround(spec.test_frac * n));
    const index_t n_train = n - n_val - n_test;
    if (n_train < 1) throw InvalidInput("split: train split would be empty");
    const auto idx = shuffled_indices(n, spec.seed);
    Splits out;
    out.train.reserve(n_train);
    out.val.reserve(n_val);
    out.test.reserve(n_test);
    for (index_t i = 0; i < n; ++i) {
        const CohortSample& s = samples[idx[i]];
        if (i < n_train) out.train.push_back(s);
        else if (i < n_train + n_val) out.val.push_back(s);
        else out.test.push_back(s);
    }
    return out;
}

Cohort gen_synthetic(index_t n, index_t dim, scalar_t bias_strength, scalar_t noise_sd,
                     std::uint64_t seed) {
    if (n < 4) throw InvalidInput("gen_synthetic: n must be >= 4");
    if (dim < 1) throw InvalidInput("gen_synthetic: dim must be >= 1");
    if (noise_sd < 0) throw InvalidInput("gen_synthetic: noise_sd must be >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<scalar_t> gauss(0.0, 1.0);
    std::uniform_real_distribution<scalar_t> unif(0.0, 1.0);
    const scalar_t inv_sqrt_d = 1.0 / std::sqrt(static_cast<scalar_t>(dim));
    Cohort samples;
    samples.reserve(n);
    for (index_t i = 0; i < n; ++i) {
        CohortSample s;
        s.x = vector_t(dim);
        for (index_t d = 0; d < dim; ++d) s.x[d] = gauss(rng);
        scalar_t s1 = 0.0, s2 = 0.0;
        for (index_t d = 0; d < dim; ++d) {
            s1 += s.x[d];
            s2 += (d % 2 == 0 ? 1.0 : -1.0) * s.x[d];
        }
        s1 *= inv_sqrt_d;
        s2 *= inv_sqrt_d;
        const scalar_t p_treat = 1.0 / (1.0 + std::exp(-bias_strength * s1));
        s.t = unif(rng) < p_treat ? 1 : 0;
        const scalar_t mu0 = s1 + std::sin(s1);
        const scalar_t mu1 = mu0 + 2.0 + 1.5 * std::tanh(s2);
        s.mu0 = mu0;
        s.mu1 = mu1;
        s.y_factual = (s.t == 1 ? mu1 : mu0) + noise_sd * gauss(rng);
        samples.push_back(std::move(s));
    }
    return samples;
}

Scaler Scaler::fit(const Cohort& train) {
    if (train.empty()) throw InvalidInput("Scaler::fit: no samples");
    const index_t dim = train.front().x.size();
    const scalar_t n = static_cast<scalar_t>(train.size());
    Scaler sc;
    sc.mean = vector_t::Zero(dim);
    sc.scale = vector_t::Ones(dim);
    sc.scaled_col.assign(dim, 1);
    for (const auto& s : train) {
        if (s.x.size() != dim) throw InvalidInput("Scaler::fit: inconsistent dimensions");
        sc.mean += s.x;
    }
    sc.mean /= n;
    vector_t var = vector_t::Zero(dim);
    for (const auto& s : train) var += (s.x - sc.mean).cwiseAbs2();
    var /= n;
    for (index_t d = 0; d < dim; ++d) {
        bool binary = true;
        for (const auto& s : train)
            if (s.x[d] != 0.0 && s.x[d] != 1.0) {
                binary = false;
                break;
            }
        if (binary || var[d] <= 0.0) {
            sc.scaled_col[d] = 0;
            sc.mean[d] = 0.0;
            sc.scale[d] = 1.0;
        } else {
            sc.scale[d] = 1.0 / std::sqrt(var[d]);
        }
    }
    return sc;
}

void Scaler::apply(Cohort& samples) const {
    for (auto& s : samples) {
        if (s.x.size() != mean.size()) throw InvalidInput("Scaler::apply: dimension mismatch");
        s.x = (s.x - mean).cwiseProduct(scale);
    }
}

Batch to_batch(const Cohort& samples) {
    if (samples.empty()) throw InvalidInput("to_batch: no samples");
    const index_t n = static_cast<index_t>(samples.size());
    const index_t dim = samples.front().x.size();
    Batch b;
    b.x = matrix_t(n, dim);
    b.t.resize(n);
    b.y = vector_t(n);
    for (index_t i = 0; i < n; ++i) {
        if (samples[i].x.size() != dim) throw InvalidInput("to_batch: inconsistent dimensions");
        b.x.row(i) = samples[i].x.transpose();
        b.t[i] = samples[i].t;
        b.y[i] = samples[i].y_factual;
    }
    return b;
}

matrix_t group_covariates(const Cohort& samples, int group) {
    index_t count = 0;
    for (const auto& s : samples)
        if (s.t == group) ++count;
    if (count == 0) throw InvalidInput("group_covariates: empty group");
    const index_t dim = samples.front().x.size();
    matrix_t x(count, dim);
    index_t at = 0;
    for (const auto& s : samples)
        if (s.t == group) x.row(at++) = s.x.transpose();
    return x;
}

}  // namespace gwib
