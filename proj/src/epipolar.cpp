#include "fieldstack/epipolar.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fieldstack/rng.hpp"

namespace fieldstack {

namespace {

Eigen::Matrix3d to_eigen(const std::array<double, 9>& a) {
    Eigen::Matrix3d m;
    m << a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8];
    return m;
}

std::array<double, 9> from_eigen(const Eigen::Matrix3d& m) {
    return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2)};
}

// Unit norm, largest-magnitude entry positive; scan order breaks ties.
Eigen::Matrix3d canonicalize(Eigen::Matrix3d f) {
    const double n = f.norm();
    if (!(n > 0.0)) throw Error("zero fundamental matrix");
    f /= n;
    double best = 0.0;
    double sign = 1.0;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            if (std::abs(f(r, c)) > best) {
                best = std::abs(f(r, c));
                sign = f(r, c) < 0.0 ? -1.0 : 1.0;
            }
        }
    }
    return sign * f;
}

// Hartley normalization: centroid at the origin, RMS radius sqrt(2).
Eigen::Matrix3d normalizing_transform(const std::vector<PointPair>& pairs, bool second) {
    double mx = 0.0, my = 0.0;
    for (const PointPair& p : pairs) {
        mx += second ? p.x2 : p.x1;
        my += second ? p.y2 : p.y1;
    }
    const double n = static_cast<double>(pairs.size());
    mx /= n;
    my /= n;
    double ms = 0.0;
    for (const PointPair& p : pairs) {
        const double dx = (second ? p.x2 : p.x1) - mx;
        const double dy = (second ? p.y2 : p.y1) - my;
        ms += dx * dx + dy * dy;
    }
    const double rms = std::sqrt(ms / n);
    if (rms < 1e-12) throw Error("degenerate configuration: coincident points");
    const double s = std::sqrt(2.0) / rms;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
    return t;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d s;
    s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return s;
}

Eigen::Vector3d canonical_direction(Eigen::Vector3d v) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
        if (std::abs(v[i]) > std::abs(v[best])) best = i;
    }
    if (v[best] < 0.0) v = -v;
    return v;
}

void check_epipole_outside(const Eigen::Vector3d& e, Extent size, int which) {
    const double scale = e.head<2>().norm();
    if (std::abs(e.z()) <= 1e-12 * std::max(scale, 1.0)) return; // at infinity
    const double px = e.x() / e.z();
    const double py = e.y() / e.z();
    if (px >= 0.0 && px <= size.width - 1.0 && py >= 0.0 && py <= size.height - 1.0) {
        std::ostringstream os;
        os << "epipole inside image " << which << " at (" << px << ", " << py << ")";
        throw Error(os.str());
    }
}

Eigen::Vector2d dehom(const Eigen::Vector3d& v) {
    if (std::abs(v.z()) < 1e-15) throw Error("rectification maps image corner to infinity");
    return {v.x() / v.z(), v.y() / v.z()};
}

} // namespace

FundamentalMatrix estimate_f_8point(const std::vector<PointPair>& pairs) {
    if (pairs.size() < 8) throw Error("need at least 8 correspondences");
    const Eigen::Matrix3d t1 = normalizing_transform(pairs, false);
    const Eigen::Matrix3d t2 = normalizing_transform(pairs, true);

    const int n = static_cast<int>(pairs.size());
    Eigen::MatrixXd a(n, 9);
    for (int i = 0; i < n; ++i) {
        const PointPair& p = pairs[static_cast<std::size_t>(i)];
        const double x1 = t1(0, 0) * p.x1 + t1(0, 2);
        const double y1 = t1(1, 1) * p.y1 + t1(1, 2);
        const double x2 = t2(0, 0) * p.x2 + t2(0, 2);
        const double y2 = t2(1, 1) * p.y2 + t2(1, 2);
        a.row(i) << x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0;
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(7) < 1e-10 * sv(0)) {
        throw Error("degenerate configuration: design matrix rank below 8");
    }
    const Eigen::VectorXd f = svd.matrixV().col(8);
    Eigen::Matrix3d fn;
    fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

    Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = fsvd.singularValues();
    d(2) = 0.0;
    fn = fsvd.matrixU() * d.asDiagonal() * fsvd.matrixV().transpose();

    const Eigen::Matrix3d denorm = t2.transpose() * fn * t1;
    return {from_eigen(canonicalize(denorm))};
}

FundamentalMatrix estimate_f_translation(const std::vector<PointPair>& pairs) {
    if (pairs.size() < 8) throw Error("need at least 8 correspondences");

    // One normalization shared by both images keeps T' [e]x T skew, i.e. the
    // fitted family really is the set of translation-only geometries.
    double mx = 0.0, my = 0.0;
    for (const PointPair& p : pairs) {
        mx += p.x1 + p.x2;
        my += p.y1 + p.y2;
    }
    const double n2 = 2.0 * static_cast<double>(pairs.size());
    mx /= n2;
    my /= n2;
    double ms = 0.0;
    for (const PointPair& p : pairs) {
        ms += (p.x1 - mx) * (p.x1 - mx) + (p.y1 - my) * (p.y1 - my);
        ms += (p.x2 - mx) * (p.x2 - mx) + (p.y2 - my) * (p.y2 - my);
    }
    const double rms = std::sqrt(ms / n2);
    if (rms < 1e-12) throw Error("degenerate configuration: coincident points");
    const double s = std::sqrt(2.0) / rms;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;

    // With F = [e]x the residual x2' F x1 equals e . (x1 x x2), so the
    // epipole is the null direction of the stacked cross products.
    const int n = static_cast<int>(pairs.size());
    Eigen::MatrixXd a(n, 3);
    for (int i = 0; i < n; ++i) {
        const PointPair& p = pairs[static_cast<std::size_t>(i)];
        const Eigen::Vector3d x1(s * p.x1 - s * mx, s * p.y1 - s * my, 1.0);
        const Eigen::Vector3d x2(s * p.x2 - s * mx, s * p.y2 - s * my, 1.0);
        a.row(i) = x1.cross(x2).transpose();
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    if (!(svd.singularValues()(0) > 0.0)) {
        throw Error("degenerate configuration: zero displacement everywhere");
    }
    const Eigen::Vector3d e = svd.matrixV().col(2);
    const Eigen::Matrix3d denorm = t.transpose() * skew(e) * t;
    return {from_eigen(canonicalize(denorm))};
}

double sampson_distance(const FundamentalMatrix& f, const PointPair& p) {
    const Eigen::Matrix3d fm = to_eigen(f.m);
    const Eigen::Vector3d x1(p.x1, p.y1, 1.0);
    const Eigen::Vector3d x2(p.x2, p.y2, 1.0);
    const Eigen::Vector3d fx = fm * x1;
    const Eigen::Vector3d ftx = fm.transpose() * x2;
    const double num = x2.dot(fx);
    const double den = fx(0) * fx(0) + fx(1) * fx(1) + ftx(0) * ftx(0) + ftx(1) * ftx(1);
    if (den < 1e-24) return std::numeric_limits<double>::infinity();
    return num * num / den;
}

void RansacParams::validate() const {
    if (!(threshold_px > 0.0)) throw Error("ransac threshold must be positive");
    if (!(confidence > 0.0 && confidence < 1.0)) throw Error("ransac confidence must be in (0,1)");
    if (max_iters < 1) throw Error("ransac max_iters must be at least 1");
}

RobustFit ransac_f(const std::vector<PointPair>& matches, const RansacParams& params) {
    params.validate();
    const std::size_t n = matches.size();
    if (n < 8) throw Error("need at least 8 matches for a robust fit");

    const double thr_sq = params.threshold_px * params.threshold_px;
    std::mt19937_64 gen(params.seed);

    std::vector<char> best_mask(n, 0);
    int best_count = 0;
    int needed = params.max_iters;
    int iter = 0;
    std::array<std::size_t, 8> idx{};
    std::vector<PointPair> sample(8);

    for (; iter < needed; ++iter) {
        for (int k = 0; k < 8; ++k) {
            std::size_t cand;
            bool fresh;
            do {
                cand = static_cast<std::size_t>(uniform_below(gen, n));
                fresh = true;
                for (int j = 0; j < k; ++j) {
                    if (idx[static_cast<std::size_t>(j)] == cand) {
                        fresh = false;
                        break;
                    }
                }
            } while (!fresh);
            idx[static_cast<std::size_t>(k)] = cand;
            sample[static_cast<std::size_t>(k)] = matches[cand];
        }

        FundamentalMatrix f;
        try {
            f = estimate_f_8point(sample);
        } catch (const Error&) {
            continue; // degenerate minimal sample
        }

        int count = 0;
        std::vector<char> mask(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (sampson_distance(f, matches[i]) < thr_sq) {
                mask[i] = 1;
                ++count;
            }
        }
        if (count > best_count) {
            best_count = count;
            best_mask = std::move(mask);
            const double w = static_cast<double>(count) / static_cast<double>(n);
            const double p_all = std::pow(w, 8.0);
            if (p_all >= 1.0 - 1e-12) {
                needed = iter + 1;
            } else if (p_all > 1e-12) {
                const double est = std::log(1.0 - params.confidence) / std::log(1.0 - p_all);
                needed = static_cast<int>(
                    std::min<double>(params.max_iters, std::max(1.0, std::ceil(est))));
            }
        }
    }

    if (best_count < 8) {
        throw Error("robust fit failed: only " + std::to_string(best_count) + " of " +
                    std::to_string(n) + " matches are consistent");
    }

    std::vector<PointPair> inliers;
    inliers.reserve(static_cast<std::size_t>(best_count));
    for (std::size_t i = 0; i < n; ++i) {
        if (best_mask[i]) inliers.push_back(matches[i]);
    }
    RobustFit fit;
    fit.f = estimate_f_8point(inliers);
    fit.iterations_used = iter;
    fit.inlier_mask.assign(n, 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = sampson_distance(fit.f, matches[i]);
        if (d < thr_sq) {
            fit.inlier_mask[i] = 1;
            ++fit.inlier_count;
            sum += d;
        }
    }
    if (fit.inlier_count < 8) {
        throw Error("robust fit failed: refit kept only " + std::to_string(fit.inlier_count) +
                    " inliers");
    }
    fit.inlier_rms_sampson = std::sqrt(sum / fit.inlier_count);
    return fit;
}

RectifyingPair rectify(const FundamentalMatrix& f, const std::vector<PointPair>& inliers,
                       Extent image_size) {
    if (inliers.size() < 8) throw Error("need at least 8 inliers to rectify");
    if (image_size.width < 2 || image_size.height < 2) throw Error("invalid image size");
    const Eigen::Matrix3d fm = to_eigen(f.m);

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(fm, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(0) <= 0.0) throw Error("zero fundamental matrix");
    const Eigen::Vector3d e1 = canonical_direction(svd.matrixV().col(2)); // F e1 = 0
    const Eigen::Vector3d e2 = canonical_direction(svd.matrixU().col(2)); // F' e2 = 0
    check_epipole_outside(e1, image_size, 1);
    check_epipole_outside(e2, image_size, 2);

    // Send the image-2 epipole to infinity, working about the image centre.
    const double cx = image_size.width / 2.0;
    const double cy = image_size.height / 2.0;
    Eigen::Matrix3d t;
    t << 1, 0, -cx, 0, 1, -cy, 0, 0, 1;
    Eigen::Matrix3d t_inv;
    t_inv << 1, 0, cx, 0, 1, cy, 0, 0, 1;

    const Eigen::Vector3d et = t * e2;
    const double planar = et.head<2>().norm();
    if (planar < 1e-12) throw Error("epipole inside image 2 at the image centre");
    const double theta = std::atan2(et.y(), et.x());
    Eigen::Matrix3d r;
    r << std::cos(theta), std::sin(theta), 0, -std::sin(theta), std::cos(theta), 0, 0, 0, 1;

    Eigen::Matrix3d g = Eigen::Matrix3d::Identity();
    if (std::abs(et.z()) > 1e-12 * planar) {
        const double fdist = planar / et.z(); // signed distance along +x after rotation
        g(2, 0) = -1.0 / fdist;
    }
    Eigen::Matrix3d h2 = t_inv * g * r * t;

    // Matching transform for image 1: H1 = HA * H2 * (skew(e2) F + e2 vT)
    const Eigen::Vector3d e2u = e2.normalized();
    const Eigen::Matrix3d h0 = skew(e2u) * fm + e2u * Eigen::RowVector3d(1, 1, 1);
    const Eigen::Matrix3d p = h2 * h0;

    const int n = static_cast<int>(inliers.size());
    Eigen::MatrixXd lhs(n, 3);
    Eigen::VectorXd rhs(n);
    for (int i = 0; i < n; ++i) {
        const PointPair& m = inliers[static_cast<std::size_t>(i)];
        const Eigen::Vector2d a = dehom(p * Eigen::Vector3d(m.x1, m.y1, 1.0));
        const Eigen::Vector2d b = dehom(h2 * Eigen::Vector3d(m.x2, m.y2, 1.0));
        lhs.row(i) << a.x(), a.y(), 1.0;
        rhs(i) = b.x();
    }
    const Eigen::Vector3d abc = lhs.colPivHouseholderQr().solve(rhs);
    Eigen::Matrix3d ha = Eigen::Matrix3d::Identity();
    ha.row(0) = abc.transpose();
    Eigen::Matrix3d h1 = ha * p;

    // Common integer translation so the union of both warped footprints
    // lands at the origin; a shared shift keeps rows and disparities aligned.
    double minx = std::numeric_limits<double>::infinity();
    double miny = minx;
    double maxx = -minx;
    double maxy = -minx;
    const double w1 = image_size.width - 1.0;
    const double h1e = image_size.height - 1.0;
    const Eigen::Vector2d corners[4] = {{0, 0}, {w1, 0}, {0, h1e}, {w1, h1e}};
    for (const Eigen::Matrix3d* hom : {&h1, &h2}) {
        for (const Eigen::Vector2d& c : corners) {
            const Eigen::Vector2d q = dehom(*hom * Eigen::Vector3d(c.x(), c.y(), 1.0));
            minx = std::min(minx, q.x());
            maxx = std::max(maxx, q.x());
            miny = std::min(miny, q.y());
            maxy = std::max(maxy, q.y());
        }
    }
    Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
    shift(0, 2) = -std::floor(minx);
    shift(1, 2) = -std::floor(miny);
    h1 = shift * h1;
    h2 = shift * h2;

    RectifyingPair out;
    out.extent.width = static_cast<int>(std::ceil(maxx - std::floor(minx))) + 1;
    out.extent.height = static_cast<int>(std::ceil(maxy - std::floor(miny))) + 1;
    const long long cap = 16ll * std::max(image_size.width, image_size.height) + 4096;
    if (out.extent.width > cap || out.extent.height > cap) {
        throw Error("rectified extent too large (" + std::to_string(out.extent.width) + "x" +
                    std::to_string(out.extent.height) + "); epipole too close to the image");
    }

    double sum_sq = 0.0;
    int within = 0;
    for (const PointPair& m : inliers) {
        const Eigen::Vector2d a = dehom(h1 * Eigen::Vector3d(m.x1, m.y1, 1.0));
        const Eigen::Vector2d b = dehom(h2 * Eigen::Vector3d(m.x2, m.y2, 1.0));
        const double dy = a.y() - b.y();
        sum_sq += dy * dy;
        if (std::abs(dy) <= 0.5) ++within;
    }
    out.vertical_rms = std::sqrt(sum_sq / n);
    out.vertical_frac_half_px = static_cast<double>(within) / n;

    out.h1 = from_eigen(h1);
    out.h2 = from_eigen(h2);
    return out;
}

std::array<double, 9> invert_homography(const std::array<double, 9>& h) {
    const Eigen::Matrix3d m = to_eigen(h);
    if (std::abs(m.determinant()) < 1e-15) throw Error("homography is singular");
    return from_eigen(m.inverse().eval());
}

void apply_homography(const std::array<double, 9>& h, double x, double y, double& ox, double& oy) {
    const double w = h[6] * x + h[7] * y + h[8];
    if (std::abs(w) < 1e-15) throw Error("point maps to infinity");
    ox = (h[0] * x + h[1] * y + h[2]) / w;
    oy = (h[3] * x + h[4] * y + h[5]) / w;
}

} // namespace fieldstack
