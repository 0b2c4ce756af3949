#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "climatellm/grid.hpp"

namespace climatellm {

using cplx = std::complex<double>;

/// Complex 2D Fourier coefficients of a GridField, one M x N plane per
/// variable, with real and imaginary parts in separate planes.
///
/// Bin (k_m, k_n) of variable v lives at `(v * M + k_m) * N + k_n`, 0-based,
/// with k_m along latitude and k_n along longitude.
struct SpectralField {
    std::vector<std::string> var_names;
    std::vector<double> lats;
    std::vector<double> lons;
    std::vector<double> re;
    std::vector<double> im;
    bool hermitian = false;

    static SpectralField zeros(std::vector<std::string> var_names, std::vector<double> lats,
                               std::vector<double> lons);
    static SpectralField zeros_like(const GridField& grid);

    std::size_t n_vars() const { return var_names.size(); }
    std::size_t n_lat() const { return lats.size(); }
    std::size_t n_lon() const { return lons.size(); }
    std::size_t plane_size() const { return n_lat() * n_lon(); }
    std::size_t index(std::size_t v, std::size_t km, std::size_t kn) const {
        return (v * n_lat() + km) * n_lon() + kn;
    }
    cplx at(std::size_t v, std::size_t km, std::size_t kn) const {
        const std::size_t i = index(v, km, kn);
        return {re[i], im[i]};
    }
    void set(std::size_t v, std::size_t km, std::size_t kn, cplx c) {
        const std::size_t i = index(v, km, kn);
        re[i] = c.real();
        im[i] = c.imag();
    }

    /// Throws ShapeError / InvalidInput on inconsistent sizes or non-finite entries.
    void validate() const;
};

/// Unnormalized 1D FFT plan for a fixed length (any length; prime factors
/// are handled by direct summation).
class FftPlan {
public:
    explicit FftPlan(std::size_t n);

    std::size_t size() const { return n_; }

    /// In-place transform. `inverse` flips the kernel sign; no scaling applied.
    void transform(std::span<cplx> data, bool inverse) const;

private:
    void recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n,
                 bool inverse, cplx* scratch) const;
    cplx twiddle(std::size_t j, std::size_t n, bool inverse) const;

    std::size_t n_;
    std::vector<cplx> roots_;  // exp(-2 pi i j / n_)
};

/// In-place unnormalized 2D FFT of `vars` consecutive M x N complex planes.
void fft2_planes(std::vector<cplx>& data, std::size_t vars, std::size_t n_lat, std::size_t n_lon,
                 bool inverse);

/// Forward transform of raw V x M x N real values into separate planes.
void dft2_values(std::span<const double> values, std::size_t vars, std::size_t n_lat,
                 std::size_t n_lon, std::vector<double>& re, std::vector<double>& im);

/// Forward 2D DFT of every variable plane, unnormalized:
/// S[k_m,k_n] = sum_{m,n} x[m,n] exp(-2 pi i (k_m m / M + k_n n / N)).
SpectralField dft2(const GridField& field);

/// Literal O(M^2 N^2) evaluation of the same sum. Test oracle only; refuses
/// grids with more than 64 x 64 points.
SpectralField dft2_bruteforce(const GridField& field);

/// Inverse with 1/(MN) prefactor. Throws SymmetryViolation if the imaginary
/// part of the reconstruction exceeds `max_imag_residue` anywhere.
GridField idft2(const SpectralField& spec, double max_imag_residue = 1e-6);

/// Complex inverse (no residue check); returns real and imaginary planes.
void idft2_complex(const SpectralField& spec, std::vector<double>& re_out,
                   std::vector<double>& im_out);

/// Signed wavenumber of index k on an axis of length n.
inline long signed_frequency(std::size_t k, std::size_t n) {
    return k <= n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

/// Set of retained bins in one M x N plane, in row-major order.
struct ModeLayout {
    std::size_t n_lat = 0;
    std::size_t n_lon = 0;
    std::size_t k_max = 0;               // 0 means every bin is kept
    std::vector<std::size_t> flat;       // plane offsets km * N + kn

    /// Bins with |signed k_m| < k_max and |signed k_n| < k_max.
    static ModeLayout truncated(std::size_t n_lat, std::size_t n_lon, std::size_t k_max);
    /// Every bin of the plane.
    static ModeLayout full(std::size_t n_lat, std::size_t n_lon);

    std::size_t size() const { return flat.size(); }
};

/// Zero every bin outside the low-frequency block |k_m|, |k_n| < k_max.
/// Requires 1 <= k_max <= min(M, N) / 2.
SpectralField truncate_modes(const SpectralField& spec, std::size_t k_max);

/// (S + conj(S mirrored)) / 2, the orthogonal projection onto spectra of
/// real fields.
SpectralField hermitian_symmetrize(const SpectralField& spec);

/// Largest |S[k] - conj(S[-k])| over all bins.
double hermitian_defect(const SpectralField& spec);

/// Sum of |S|^2 over every bin.
double spectral_energy(const SpectralField& spec);

/// Sum of |S|^2 over the bins listed in `layout`, every variable.
double spectral_energy(const SpectralField& spec, const ModeLayout& layout);

// ---------------------------------------------------------------------------
// Square-grid transform identities used in the frequency-domain forecasting
// argument. These use the 1/N^2 forward normalization on an N x N grid with
// index x along rows and y along columns.

struct Prop1Entry {
    cplx A;
    cplx B;
    /// F(u, v) with the 1/N^2 forward normalization.
    cplx F;
    /// |A - (N F - (N + 1) B)|, an exact rearrangement of the two sums.
    double identity_residual = 0.0;
};

struct Prop1RoundTrip {
    double max_abs_error = 0.0;
    bool passed = false;
};

/// Fixed text describing the part of the extension formulas that is not
/// computable as written.
extern const char* const kProp1AmbiguityNote;

/// A and B coefficients at (u, v) by literal summation. The field must have
/// one variable on a square grid.
Prop1Entry prop1_coefficients(const GridField& field, std::size_t u, std::size_t v);

/// Forward transform with 1/N^2 and the unscaled inverse; reports the largest
/// reconstruction error. Passes iff the error is at most `tolerance`.
Prop1RoundTrip prop1_roundtrip_check(const GridField& field, double tolerance = 1e-9);

}  // namespace climatellm
