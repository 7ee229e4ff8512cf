#pragma once
// Pattern ensembles (IID Gaussian, Haar row-orthonormal) and labels.

#include "models.hpp"
#include "rng.hpp"
#include "spectrum.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

namespace corrpat {

struct PatternError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GeneratorSpec {
    std::string kind = "random_orthogonal";  // iid_gaussian | random_orthogonal
    int N = 0, p = 0;
    std::string label_mode = "random_pm1";  // random_pm1 | teacher
    PriorPtr teacher_prior;
    ChannelPtr teacher_channel;
    std::uint64_t seed = 0;
    double alpha() const { return N > 0 ? double(p) / N : 0.0; }
};

struct ProblemInstance {
    Eigen::MatrixXd X;  // p x N
    Eigen::VectorXd y;
    PriorPtr prior;     // recognition
    ChannelPtr channel;
    SpectrumModel spectrum;
    std::optional<Eigen::VectorXd> w0;
    std::string kind;
    std::string label_mode;
    std::uint64_t seed = 0;

    int N() const { return int(X.cols()); }
    int p() const { return int(X.rows()); }
    double alpha() const { return double(p()) / N(); }
};

inline Eigen::MatrixXd gaussian_matrix(int rows, int cols, Philox& rng) {
    Eigen::MatrixXd G(rows, cols);
    // fill row-major so the draw order does not depend on the storage layout
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) G(i, j) = rng.normal();
    return G;
}

// Q from a Householder QR with columns rescaled so that diag(R) > 0.
inline Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& A) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
    const Eigen::MatrixXd& R = qr.matrixQR();
    for (Eigen::Index k = 0; k < A.cols(); ++k)
        if (R(k, k) < 0) Q.col(k) *= -1.0;
    return Q;
}

inline Eigen::MatrixXd haar_orthogonal(int n, std::uint64_t seed) {
    if (n < 1) throw PatternError("haar_orthogonal: n must be >= 1");
    Philox rng = make_stream(seed, "haar");
    return orthonormal_columns(gaussian_matrix(n, n, rng));
}

// p x N with X X^T = I_p, rows a Haar-random p-frame.
inline Eigen::MatrixXd row_orthonormal(int p, int N, Philox& rng) {
    if (p > N) throw PatternError("random_orthogonal patterns need p <= N");
    if (p == 0) return Eigen::MatrixXd(0, N);
    const Eigen::MatrixXd G = gaussian_matrix(p, N, rng);
    return orthonormal_columns(G.transpose()).transpose();
}

inline Eigen::MatrixXd iid_patterns(int p, int N, Philox& rng) {
    return gaussian_matrix(p, N, rng) / std::sqrt(double(N));
}

inline Eigen::MatrixXd make_patterns(const std::string& kind, int p, int N, std::uint64_t seed) {
    if (N <= 0 || p < 0) throw PatternError("patterns: need N > 0 and p >= 0");
    Philox rng = make_stream(seed, "patterns");
    if (kind == "random_orthogonal") return row_orthonormal(p, N, rng);
    if (kind == "iid_gaussian") return iid_patterns(p, N, rng);
    throw PatternError("unknown pattern kind: " + kind);
}

// Empirical spectrum of X^T X, via the smaller Gram matrix.
inline SpectrumModel spectrum_of(const Eigen::MatrixXd& X) {
    const int p = int(X.rows()), N = int(X.cols());
    std::vector<double> eig;
    if (p > 0) {
        const Eigen::MatrixXd C = p <= N ? Eigen::MatrixXd(X * X.transpose()) : Eigen::MatrixXd(X.transpose() * X);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C, Eigen::EigenvaluesOnly);
        eig.assign(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    }
    SpectrumModel s = empirical_spectrum(eig, N, double(p) / N);
    return s;
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> labels_from_teacher(const Eigen::MatrixXd& X, const Prior& teacher,
                                                                        const Channel& channel, std::uint64_t seed) {
    Philox rw = make_stream(seed, "teacher");
    Eigen::VectorXd w0(X.cols());
    for (Eigen::Index i = 0; i < w0.size(); ++i) w0[i] = teacher.sample(rw);
    const Eigen::VectorXd delta = X * w0;
    Philox ry = make_stream(seed, "labels");
    Eigen::VectorXd y(X.rows());
    for (Eigen::Index m = 0; m < y.size(); ++m) y[m] = channel.sample(delta[m], ry);
    return {y, w0};
}

inline Eigen::VectorXd random_labels(int p, std::uint64_t seed) {
    Philox ry = make_stream(seed, "labels");
    Eigen::VectorXd y(p);
    for (int m = 0; m < p; ++m) y[m] = ry.sign();
    return y;
}

inline ProblemInstance generate(const GeneratorSpec& g, PriorPtr prior, ChannelPtr channel) {
    if (g.kind == "random_orthogonal" && g.p > g.N) throw PatternError("random_orthogonal patterns need p <= N");
    ProblemInstance inst;
    inst.X = make_patterns(g.kind, g.p, g.N, g.seed);
    inst.kind = g.kind;
    inst.label_mode = g.label_mode;
    inst.seed = g.seed;
    inst.prior = std::move(prior);
    inst.channel = std::move(channel);
    if (g.label_mode == "random_pm1") {
        inst.y = random_labels(g.p, g.seed);
    } else if (g.label_mode == "teacher") {
        if (!g.teacher_prior || !g.teacher_channel) throw PatternError("teacher labels need a teacher model");
        auto [y, w0] = labels_from_teacher(inst.X, *g.teacher_prior, *g.teacher_channel, g.seed);
        inst.y = std::move(y);
        inst.w0 = std::move(w0);
    } else {
        throw PatternError("unknown label mode: " + g.label_mode);
    }
    inst.spectrum = spectrum_of(inst.X);
    return inst;
}

// Instance with user-supplied data; the spectrum is computed from X.
inline ProblemInstance make_instance(Eigen::MatrixXd X, Eigen::VectorXd y, PriorPtr prior, ChannelPtr channel) {
    if (X.rows() != y.size()) throw PatternError("instance: X rows and y length differ");
    ProblemInstance inst;
    inst.X = std::move(X);
    inst.y = std::move(y);
    inst.prior = std::move(prior);
    inst.channel = std::move(channel);
    inst.kind = "custom";
    inst.label_mode = "given";
    inst.spectrum = spectrum_of(inst.X);
    return inst;
}

namespace detail {

template <class T>
void write_le(std::ofstream& f, T v) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    f.write(b, sizeof(T));
}

template <class T>
T read_le(std::ifstream& f) {
    char b[sizeof(T)];
    if (!f.read(b, sizeof(T))) throw PatternError("instance payload truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

// <stem>.json header, <stem>.X.bin (row-major float64 LE), labels as <stem>.y.i8 (±1) or <stem>.y.bin,
// and <stem>.csv for N <= 50.
inline void export_instance(const ProblemInstance& inst, const std::filesystem::path& stem) {
    const bool binary = (inst.y.array().abs() == 1.0).all();
    nlohmann::json h{{"N", inst.N()},           {"p", inst.p()},
                     {"kind", inst.kind},       {"seed", inst.seed},
                     {"label_mode", inst.label_mode}, {"label_format", binary ? "int8" : "float64"}};
    std::ofstream(stem.string() + ".json") << h.dump(2) << "\n";
    {
        std::ofstream f(stem.string() + ".X.bin", std::ios::binary);
        for (int i = 0; i < inst.p(); ++i)
            for (int j = 0; j < inst.N(); ++j) detail::write_le<double>(f, inst.X(i, j));
    }
    if (binary) {
        std::ofstream f(stem.string() + ".y.i8", std::ios::binary);
        for (int i = 0; i < inst.p(); ++i) detail::write_le<std::int8_t>(f, std::int8_t(inst.y[i]));
    } else {
        std::ofstream f(stem.string() + ".y.bin", std::ios::binary);
        for (int i = 0; i < inst.p(); ++i) detail::write_le<double>(f, inst.y[i]);
    }
    if (inst.N() <= 50) {
        std::ofstream f(stem.string() + ".csv");
        f.precision(17);
        f << "y";
        for (int j = 0; j < inst.N(); ++j) f << ",x" << j;
        f << "\n";
        for (int i = 0; i < inst.p(); ++i) {
            f << inst.y[i];
            for (int j = 0; j < inst.N(); ++j) f << "," << inst.X(i, j);
            f << "\n";
        }
    }
}

inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> import_instance(const std::filesystem::path& stem) {
    std::ifstream hf(stem.string() + ".json");
    if (!hf) throw PatternError("missing instance header " + stem.string() + ".json");
    const nlohmann::json h = nlohmann::json::parse(hf);
    const int N = h.at("N"), p = h.at("p");
    Eigen::MatrixXd X(p, N);
    std::ifstream xf(stem.string() + ".X.bin", std::ios::binary);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < N; ++j) X(i, j) = detail::read_le<double>(xf);
    Eigen::VectorXd y(p);
    if (h.value("label_format", "int8") == "int8") {
        std::ifstream yf(stem.string() + ".y.i8", std::ios::binary);
        for (int i = 0; i < p; ++i) y[i] = detail::read_le<std::int8_t>(yf);
    } else {
        std::ifstream yf(stem.string() + ".y.bin", std::ios::binary);
        for (int i = 0; i < p; ++i) y[i] = detail::read_le<double>(yf);
    }
    return {X, y};
}

}  // namespace corrpat
