#include "climatellm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "climatellm/errors.hpp"

namespace climatellm {

namespace {

std::size_t smallest_factor(std::size_t n) {
    if (n % 2 == 0) return 2;
    for (std::size_t p = 3; p * p <= n; p += 2) {
        if (n % p == 0) return p;
    }
    return n;
}

// exp(sign * 2 pi i * num / den) with the angle reduced exactly first.
cplx unit_root(std::size_t num, std::size_t den, double sign) {
    const double angle = sign * 2.0 * std::numbers::pi *
                         static_cast<double>(num % den) / static_cast<double>(den);
    return {std::cos(angle), std::sin(angle)};
}

void check_spectrum(const SpectralField& spec) { spec.validate(); }

}  // namespace

// ---------------------------------------------------------------------------

SpectralField SpectralField::zeros(std::vector<std::string> var_names, std::vector<double> lats,
                                   std::vector<double> lons) {
    SpectralField s;
    s.var_names = std::move(var_names);
    s.lats = std::move(lats);
    s.lons = std::move(lons);
    s.re.assign(s.n_vars() * s.plane_size(), 0.0);
    s.im.assign(s.re.size(), 0.0);
    s.hermitian = true;
    return s;
}

SpectralField SpectralField::zeros_like(const GridField& grid) {
    return zeros(grid.var_names(), grid.lats(), grid.lons());
}

void SpectralField::validate() const {
    if (n_vars() == 0 || n_lat() == 0 || n_lon() == 0) throw ShapeError("empty spectral field");
    const std::size_t expected = n_vars() * plane_size();
    if (re.size() != expected || im.size() != expected) {
        throw ShapeError("spectral field planes do not match " + std::to_string(n_vars()) + "x" +
                         std::to_string(n_lat()) + "x" + std::to_string(n_lon()));
    }
    for (std::size_t i = 0; i < expected; ++i) {
        if (!std::isfinite(re[i]) || !std::isfinite(im[i])) {
            throw InvalidInput("spectral field has a non-finite coefficient");
        }
    }
}

// ---------------------------------------------------------------------------

FftPlan::FftPlan(std::size_t n) : n_(n), roots_(n) {
    if (n == 0) throw InvalidInput("FFT length must be positive");
    for (std::size_t j = 0; j < n; ++j) roots_[j] = unit_root(j, n, -1.0);
}

cplx FftPlan::twiddle(std::size_t j, std::size_t n, bool inverse) const {
    const cplx w = roots_[(j % n) * (n_ / n)];
    return inverse ? std::conj(w) : w;
}

void FftPlan::recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n,
                      bool inverse, cplx* scratch) const {
    if (n == 1) {
        out[0] = in[0];
        return;
    }
    const std::size_t p = smallest_factor(n);
    if (p == n) {
        for (std::size_t k = 0; k < n; ++k) {
            cplx acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += in[j * stride] * twiddle(j * k, n, inverse);
            out[k] = acc;
        }
        return;
    }
    const std::size_t m = n / p;
    // out[r*m + k] = DFT_m of the r-th decimated subsequence.
    for (std::size_t r = 0; r < p; ++r) {
        recurse(in + r * stride, stride * p, out + r * m, m, inverse, scratch + n);
    }
    for (std::size_t q = 0; q < p; ++q) {
        for (std::size_t k = 0; k < m; ++k) {
            const std::size_t idx = k + q * m;
            cplx acc = out[k];
            for (std::size_t r = 1; r < p; ++r) acc += twiddle(r * idx, n, inverse) * out[r * m + k];
            scratch[idx] = acc;
        }
    }
    std::copy(scratch, scratch + n, out);
}

void FftPlan::transform(std::span<cplx> data, bool inverse) const {
    if (data.size() != n_) throw ShapeError("FFT input length does not match plan");
    if (n_ == 1) return;
    std::vector<cplx> out(n_);
    // Each recursion level uses its own n-sized slice of scratch.
    std::vector<cplx> scratch(2 * n_);
    recurse(data.data(), 1, out.data(), n_, inverse, scratch.data());
    std::copy(out.begin(), out.end(), data.begin());
}

// ---------------------------------------------------------------------------

void fft2_planes(std::vector<cplx>& data, std::size_t vars, std::size_t M, std::size_t N,
                 bool inverse) {
    const FftPlan rows(N);
    const FftPlan cols(M);
    std::vector<cplx> column(M);
    for (std::size_t v = 0; v < vars; ++v) {
        cplx* plane = data.data() + v * M * N;
        for (std::size_t m = 0; m < M; ++m) {
            rows.transform(std::span<cplx>(plane + m * N, N), inverse);
        }
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t m = 0; m < M; ++m) column[m] = plane[m * N + n];
            cols.transform(column, inverse);
            for (std::size_t m = 0; m < M; ++m) plane[m * N + n] = column[m];
        }
    }
}


void dft2_values(std::span<const double> values, std::size_t vars, std::size_t M, std::size_t N,
                 std::vector<double>& re, std::vector<double>& im) {
    if (values.size() != vars * M * N) throw ShapeError("dft2: value count does not match grid");
    std::vector<cplx> data(values.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = values[i];
    fft2_planes(data, vars, M, N, false);
    re.resize(data.size());
    im.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        re[i] = data[i].real();
        im[i] = data[i].imag();
    }
}

SpectralField dft2(const GridField& field) {
    SpectralField out = SpectralField::zeros_like(field);
    dft2_values(field.values(), field.n_vars(), field.n_lat(), field.n_lon(), out.re, out.im);
    out.hermitian = true;
    return out;
}

SpectralField dft2_bruteforce(const GridField& field) {
    const std::size_t V = field.n_vars(), M = field.n_lat(), N = field.n_lon();
    if (M * N > 64 * 64) throw InvalidInput("dft2_bruteforce refuses grids above 64x64 points");
    SpectralField out = SpectralField::zeros_like(field);
    for (std::size_t v = 0; v < V; ++v) {
        for (std::size_t km = 0; km < M; ++km) {
            for (std::size_t kn = 0; kn < N; ++kn) {
                cplx acc = 0.0;
                for (std::size_t m = 0; m < M; ++m) {
                    for (std::size_t n = 0; n < N; ++n) {
                        // km*m/M + kn*n/N over the common denominator M*N.
                        const std::size_t num = (km * m % M) * N + (kn * n % N) * M;
                        acc += field.at(v, m, n) * unit_root(num, M * N, -1.0);
                    }
                }
                out.set(v, km, kn, acc);
            }
        }
    }
    out.hermitian = true;
    return out;
}

void idft2_complex(const SpectralField& spec, std::vector<double>& re_out,
                   std::vector<double>& im_out) {
    check_spectrum(spec);
    const std::size_t V = spec.n_vars(), M = spec.n_lat(), N = spec.n_lon();
    std::vector<cplx> data(spec.re.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = {spec.re[i], spec.im[i]};
    fft2_planes(data, V, M, N, true);
    const double scale = 1.0 / static_cast<double>(M * N);
    re_out.resize(data.size());
    im_out.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        re_out[i] = data[i].real() * scale;
        im_out[i] = data[i].imag() * scale;
    }
}

GridField idft2(const SpectralField& spec, double max_imag_residue) {
    std::vector<double> re, im;
    idft2_complex(spec, re, im);
    double worst = 0.0;
    for (double x : im) worst = std::max(worst, std::abs(x));
    if (worst > max_imag_residue) {
        throw SymmetryViolation("inverse transform has imaginary residue " +
                                std::to_string(worst) + "; spectrum is not Hermitian");
    }
    return GridField(spec.var_names, spec.lats, spec.lons, std::move(re));
}

// ---------------------------------------------------------------------------

ModeLayout ModeLayout::truncated(std::size_t M, std::size_t N, std::size_t k_max) {
    if (k_max == 0 || k_max > std::min(M, N) / 2) {
        throw InvalidInput("k_max must lie in [1, min(M, N)/2]; got " + std::to_string(k_max));
    }
    ModeLayout layout{M, N, k_max, {}};
    const long k = static_cast<long>(k_max);
    for (std::size_t km = 0; km < M; ++km) {
        for (std::size_t kn = 0; kn < N; ++kn) {
            if (std::labs(signed_frequency(km, M)) < k && std::labs(signed_frequency(kn, N)) < k) {
                layout.flat.push_back(km * N + kn);
            }
        }
    }
    return layout;
}

ModeLayout ModeLayout::full(std::size_t M, std::size_t N) {
    ModeLayout layout{M, N, 0, {}};
    layout.flat.resize(M * N);
    for (std::size_t i = 0; i < M * N; ++i) layout.flat[i] = i;
    return layout;
}

SpectralField truncate_modes(const SpectralField& spec, std::size_t k_max) {
    check_spectrum(spec);
    const ModeLayout layout = ModeLayout::truncated(spec.n_lat(), spec.n_lon(), k_max);
    SpectralField out = spec;
    std::fill(out.re.begin(), out.re.end(), 0.0);
    std::fill(out.im.begin(), out.im.end(), 0.0);
    const std::size_t plane = spec.plane_size();
    for (std::size_t v = 0; v < spec.n_vars(); ++v) {
        for (std::size_t offset : layout.flat) {
            out.re[v * plane + offset] = spec.re[v * plane + offset];
            out.im[v * plane + offset] = spec.im[v * plane + offset];
        }
    }
    return out;
}

SpectralField hermitian_symmetrize(const SpectralField& spec) {
    check_spectrum(spec);
    const std::size_t M = spec.n_lat(), N = spec.n_lon();
    SpectralField out = spec;
    for (std::size_t v = 0; v < spec.n_vars(); ++v) {
        for (std::size_t km = 0; km < M; ++km) {
            for (std::size_t kn = 0; kn < N; ++kn) {
                const cplx s = spec.at(v, km, kn);
                const cplx mirror = spec.at(v, (M - km) % M, (N - kn) % N);
                out.set(v, km, kn, 0.5 * (s + std::conj(mirror)));
            }
        }
    }
    out.hermitian = true;
    return out;
}

double hermitian_defect(const SpectralField& spec) {
    const std::size_t M = spec.n_lat(), N = spec.n_lon();
    double worst = 0.0;
    for (std::size_t v = 0; v < spec.n_vars(); ++v) {
        for (std::size_t km = 0; km < M; ++km) {
            for (std::size_t kn = 0; kn < N; ++kn) {
                const cplx d = spec.at(v, km, kn) -
                               std::conj(spec.at(v, (M - km) % M, (N - kn) % N));
                worst = std::max(worst, std::abs(d));
            }
        }
    }
    return worst;
}

double spectral_energy(const SpectralField& spec) {
    double total = 0.0;
    for (std::size_t i = 0; i < spec.re.size(); ++i) {
        total += spec.re[i] * spec.re[i] + spec.im[i] * spec.im[i];
    }
    return total;
}

double spectral_energy(const SpectralField& spec, const ModeLayout& layout) {
    double total = 0.0;
    const std::size_t plane = spec.plane_size();
    for (std::size_t v = 0; v < spec.n_vars(); ++v) {
        for (std::size_t offset : layout.flat) {
            const std::size_t i = v * plane + offset;
            total += spec.re[i] * spec.re[i] + spec.im[i] * spec.im[i];
        }
    }
    return total;
}

// ---------------------------------------------------------------------------

const char* const kProp1AmbiguityNote =
    "AMBIGUITY: the extension formulas for F'(u,v), f(N,y) and f(x,N) reference "
    "F(N+1, v), a coefficient that the N-point transform never defines, and the "
    "exponent of the F'(u,v) update still carries the spatial indices x and y "
    "after they have been summed out. These formulas are therefore not evaluated; "
    "only the coefficients A and B and the forward/inverse round-trip identities "
    "are checked.";

namespace {

void require_square_single(const GridField& field) {
    if (field.n_vars() != 1) throw InvalidInput("expected a single-variable field");
    if (field.n_lat() != field.n_lon()) {
        throw InvalidInput("expected a square N x N grid, got " + std::to_string(field.n_lat()) +
                           "x" + std::to_string(field.n_lon()));
    }
}

}  // namespace

Prop1Entry prop1_coefficients(const GridField& field, std::size_t u, std::size_t v) {
    require_square_single(field);
    const std::size_t N = field.n_lat();
    const double n = static_cast<double>(N);
    cplx sum_n = 0.0, sum_n1 = 0.0;
    for (std::size_t x = 0; x < N; ++x) {
        for (std::size_t y = 0; y < N; ++y) {
            const double f = field.at(0, x, y);
            sum_n += f * unit_root(u * x + v * y, N, -1.0);
            sum_n1 += f * unit_root(u * x + v * y, N + 1, -1.0);
        }
    }
    Prop1Entry e;
    e.A = sum_n / n - sum_n1 / (n + 1.0);
    e.B = sum_n1 / ((n + 1.0) * (n + 1.0));
    e.F = sum_n / (n * n);
    e.identity_residual = std::abs(e.A - (n * e.F - (n + 1.0) * e.B));
    return e;
}

Prop1RoundTrip prop1_roundtrip_check(const GridField& field, double tolerance) {
    require_square_single(field);
    const std::size_t N = field.n_lat();
    std::vector<cplx> data(N * N);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = field.values()[i];
    fft2_planes(data, 1, N, N, false);
    const double scale = 1.0 / static_cast<double>(N * N);
    for (cplx& c : data) c *= scale;
    fft2_planes(data, 1, N, N, true);
    Prop1RoundTrip report;
    for (std::size_t i = 0; i < data.size(); ++i) {
        report.max_abs_error =
            std::max(report.max_abs_error, std::abs(data[i] - cplx(field.values()[i], 0.0)));
    }
    report.passed = report.max_abs_error <= tolerance;
    return report;
}

}  // namespace climatellm
