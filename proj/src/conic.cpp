#include "croa/conic.hpp"

#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace croa {

namespace {

using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using SpMatRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

constexpr double kReg = 1e-10;        // KKT regularization
constexpr double kDiverge = 1e10;     // iterate norm treated as unbounded
constexpr double kMu = 20.0;          // barrier parameter growth

struct Prepared {
  const ConicProgram* prog = nullptr;
  SpMatRow G;                       // row-major for slack evaluation
  std::vector<SpMatRow> cone_rows;  // each block row-major
  int barrier_degree = 0;           // #linear ineq + 2 per cone
};

Prepared prepare(const ConicProgram& prog) {
  Prepared pre;
  pre.prog = &prog;
  if (prog.G.rows() > 0) pre.G = prog.G;
  pre.cone_rows.reserve(prog.cones.size());
  for (const auto& blk : prog.cones) pre.cone_rows.emplace_back(blk.C);
  pre.barrier_degree =
      static_cast<int>(prog.h.size()) + 2 * static_cast<int>(prog.cones.size());
  return pre;
}

// Strict feasibility w.r.t. the barrier domain (equalities not required).
bool strictly_feasible(const Prepared& pre, const VectorXd& x, double margin) {
  const ConicProgram& p = *pre.prog;
  if (p.h.size() > 0) {
    const VectorXd s = p.h - pre.G * x;
    if (s.minCoeff() <= margin) return false;
  }
  for (std::size_t c = 0; c < p.cones.size(); ++c) {
    const VectorXd y = pre.cone_rows[c] * x + p.cones[c].d;
    const double omega = y[0] * y[1] - y.tail(y.size() - 2).squaredNorm();
    if (y[0] <= margin || y[1] <= margin || omega <= margin) return false;
  }
  return true;
}

// Barrier value/gradient and Hessian triplets at x; returns false when x is
// outside the barrier domain.
bool barrier_terms(const Prepared& pre, const VectorXd& x, VectorXd& grad,
                   std::vector<Triplet>* hess) {
  const ConicProgram& p = *pre.prog;
  grad.setZero(p.num_vars);

  if (p.h.size() > 0) {
    const VectorXd s = p.h - pre.G * x;
    for (int i = 0; i < s.size(); ++i) {
      if (s[i] <= 0.0) return false;
      const double inv = 1.0 / s[i];
      for (SpMatRow::InnerIterator it(pre.G, i); it; ++it) {
        grad[it.col()] += inv * it.value();
      }
      if (hess) {
        const double inv2 = inv * inv;
        for (SpMatRow::InnerIterator it1(pre.G, i); it1; ++it1) {
          for (SpMatRow::InnerIterator it2(pre.G, i); it2; ++it2) {
            hess->emplace_back(it1.col(), it2.col(),
                               inv2 * it1.value() * it2.value());
          }
        }
      }
    }
  }

  for (std::size_t c = 0; c < p.cones.size(); ++c) {
    const SpMatRow& C = pre.cone_rows[c];
    const VectorXd y = C * x + p.cones[c].d;
    const int dim = static_cast<int>(y.size());
    const double omega = y[0] * y[1] - y.tail(dim - 2).squaredNorm();
    if (y[0] <= 0.0 || y[1] <= 0.0 || omega <= 0.0) return false;

    // phi = -log(u v - ||w||^2)
    VectorXd domega(dim);
    domega[0] = y[1];
    domega[1] = y[0];
    domega.tail(dim - 2) = -2.0 * y.tail(dim - 2);
    const VectorXd gy = -domega / omega;
    for (int r = 0; r < dim; ++r) {
      if (gy[r] == 0.0) continue;
      for (SpMatRow::InnerIterator it(C, r); it; ++it) {
        grad[it.col()] += gy[r] * it.value();
      }
    }
    if (hess) {
      Eigen::MatrixXd Hy = (domega * domega.transpose()) / (omega * omega);
      Hy(0, 1) -= 1.0 / omega;
      Hy(1, 0) -= 1.0 / omega;
      for (int r = 2; r < dim; ++r) Hy(r, r) += 2.0 / omega;
      for (int r1 = 0; r1 < dim; ++r1) {
        for (SpMatRow::InnerIterator it1(C, r1); it1; ++it1) {
          for (int r2 = 0; r2 < dim; ++r2) {
            const double hv = Hy(r1, r2);
            if (hv == 0.0) continue;
            for (SpMatRow::InnerIterator it2(C, r2); it2; ++it2) {
              hess->emplace_back(it1.col(), it2.col(),
                                 hv * it1.value() * it2.value());
            }
          }
        }
      }
    }
  }
  return true;
}

// Residual of the centering conditions at barrier weight 1/t:
//   r_dual = P x + q + grad(phi)/t + A' y,  r_pri = A x - b.
void residual(const Prepared& pre, const VectorXd& x, const VectorXd& y,
              double t, const VectorXd& phi_grad, VectorXd& r) {
  const ConicProgram& p = *pre.prog;
  const int n = p.num_vars;
  const int m_eq = static_cast<int>(p.b.size());
  r.resize(n + m_eq);
  VectorXd r_dual = p.q + phi_grad / t;
  if (p.P.nonZeros() > 0) r_dual += p.P * x;
  if (m_eq > 0) {
    r_dual += p.A.transpose() * y;
    r.tail(m_eq) = p.A * x - p.b;
  }
  r.head(n) = r_dual;
}

struct PathOutcome {
  VectorXd x;
  VectorXd y;
  double t = 1.0;
  int newton = 0;
  bool converged = false;
  bool numerical_failure = false;
  bool early_stopped = false;
};

// Barrier central path with infeasible-start Newton for the equality rows.
PathOutcome follow_path(const Prepared& pre, VectorXd x0, double tol,
                        int max_newton,
                        const std::function<bool(const VectorXd&)>& early_stop) {
  const ConicProgram& p = *pre.prog;
  const int n = p.num_vars;
  const int m_eq = static_cast<int>(p.b.size());

  PathOutcome out;
  out.x = std::move(x0);
  out.y = VectorXd::Zero(m_eq);

  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool analyzed = false;

  std::vector<Triplet> p_trips;  // constant part: P + reg I + A blocks
  for (int k = 0; k < p.P.outerSize(); ++k) {
    for (SpMat::InnerIterator it(p.P, k); it; ++it) {
      p_trips.emplace_back(static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
    }
  }
  for (int i = 0; i < n; ++i) p_trips.emplace_back(i, i, kReg);
  for (int i = 0; i < n + m_eq; ++i) {
    if (i >= n) p_trips.emplace_back(i, i, -kReg);
  }
  for (int k = 0; k < p.A.outerSize(); ++k) {
    for (SpMat::InnerIterator it(p.A, k); it; ++it) {
      p_trips.emplace_back(n + static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
      p_trips.emplace_back(static_cast<int>(it.col()),
                           n + static_cast<int>(it.row()), it.value());
    }
  }

  double t = 1.0;
  const double stage_tol = std::max(1e-10, 0.05 * tol);
  VectorXd phi_grad, r, r_trial, dxy, kkt_res;
  std::vector<Triplet> hess_trips;

  while (true) {
    // Center at the current t.
    double prev_rnorm = std::numeric_limits<double>::infinity();
    int stalled = 0;
    for (int it_n = 0;; ++it_n) {
      if (early_stop && early_stop(out.x)) {
        out.early_stopped = true;
        return out;
      }
      if (out.newton >= max_newton) return out;
      if (out.x.norm() > kDiverge) {
        out.numerical_failure = true;
        return out;
      }
      std::vector<Triplet> bar_trips;
      if (!barrier_terms(pre, out.x, phi_grad, &bar_trips)) {
        out.numerical_failure = true;
        return out;
      }
      residual(pre, out.x, out.y, t, phi_grad, r);
      const double rnorm = r.lpNorm<Eigen::Infinity>();
      if (rnorm <= stage_tol || it_n >= 60) break;
      // Near the numerical floor the residual stops contracting; accept the
      // plateau as the stage center rather than burning the budget.
      stalled = rnorm > 0.9 * prev_rnorm ? stalled + 1 : 0;
      if (stalled >= 3) break;
      prev_rnorm = rnorm;

      // Hessian of phi enters scaled by 1/t, matching the residual scaling.
      hess_trips = p_trips;
      for (const auto& trip : bar_trips) {
        hess_trips.emplace_back(trip.row(), trip.col(), trip.value() / t);
      }
      SpMat kkt(n + m_eq, n + m_eq);
      kkt.setFromTriplets(hess_trips.begin(), hess_trips.end());
      if (!analyzed) {
        ldlt.analyzePattern(kkt);
        analyzed = true;
      }
      ldlt.factorize(kkt);
      if (ldlt.info() != Eigen::Success) {
        out.numerical_failure = true;
        return out;
      }
      dxy = ldlt.solve(-r);
      // One round of iterative refinement against the regularization.
      kkt_res = kkt * dxy + r;
      dxy -= ldlt.solve(kkt_res);

      // Backtrack: keep the barrier domain, then decrease the residual norm.
      double alpha = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        const VectorXd x_try = out.x + alpha * dxy.head(n);
        if (strictly_feasible(pre, x_try, 0.0)) {
          const VectorXd y_try = out.y + alpha * dxy.tail(m_eq);
          barrier_terms(pre, x_try, phi_grad, nullptr);
          residual(pre, x_try, y_try, t, phi_grad, r_trial);
          if (r_trial.norm() <= (1.0 - 0.01 * alpha) * r.norm()) {
            out.x = x_try;
            out.y = y_try;
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      ++out.newton;
      if (!accepted) break;  // stalled; treat current center as final
    }

    if (pre.barrier_degree == 0 || pre.barrier_degree / t <= tol) {
      out.t = t;
      out.converged = true;
      return out;
    }
    t *= kMu;
  }
}

// Phase-I program: minimize s subject to relaxed constraints; any point with
// s < 0 is strictly feasible for the original program.
ConicProgram phase_one_program(const ConicProgram& p) {
  ConicProgram ph;
  ph.num_vars = p.num_vars + 1;
  const int s_idx = p.num_vars;
  ph.P.resize(ph.num_vars, ph.num_vars);
  ph.q = VectorXd::Zero(ph.num_vars);
  ph.q[s_idx] = 1.0;
  ph.A.resize(0, ph.num_vars);
  ph.b.resize(0);

  const int m = static_cast<int>(p.h.size());
  std::vector<Triplet> g_trips;
  for (int k = 0; k < p.G.outerSize(); ++k) {
    for (SpMat::InnerIterator it(p.G, k); it; ++it) {
      g_trips.emplace_back(static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
    }
  }
  for (int i = 0; i < m; ++i) g_trips.emplace_back(i, s_idx, -1.0);
  g_trips.emplace_back(m, s_idx, -1.0);  // s >= -1 keeps sublevel sets bounded
  ph.G.resize(m + 1, ph.num_vars);
  ph.G.setFromTriplets(g_trips.begin(), g_trips.end());
  ph.h.resize(m + 1);
  ph.h.head(m) = p.h;
  ph.h[m] = 1.0;

  for (const auto& blk : p.cones) {
    RotatedConeBlock ext;
    std::vector<Triplet> c_trips;
    for (int k = 0; k < blk.C.outerSize(); ++k) {
      for (SpMat::InnerIterator it(blk.C, k); it; ++it) {
        c_trips.emplace_back(static_cast<int>(it.row()),
                             static_cast<int>(it.col()), it.value());
      }
    }
    c_trips.emplace_back(0, s_idx, 1.0);
    c_trips.emplace_back(1, s_idx, 1.0);
    ext.C.resize(blk.C.rows(), ph.num_vars);
    ext.C.setFromTriplets(c_trips.begin(), c_trips.end());
    ext.d = blk.d;
    ph.cones.push_back(std::move(ext));
  }
  return ph;
}

double needed_relaxation(const Prepared& pre, const VectorXd& x) {
  const ConicProgram& p = *pre.prog;
  double s = 0.0;
  if (p.h.size() > 0) {
    const VectorXd slack = p.h - pre.G * x;
    s = std::max(s, -slack.minCoeff());
  }
  for (std::size_t c = 0; c < p.cones.size(); ++c) {
    const VectorXd y = pre.cone_rows[c] * x + p.cones[c].d;
    const double wn = y.tail(y.size() - 2).norm();
    s = std::max({s, wn - y[0], wn - y[1]});
  }
  return s;
}

double objective_value(const ConicProgram& p, const VectorXd& x) {
  double obj = p.q.dot(x);
  if (p.P.nonZeros() > 0) obj += 0.5 * x.dot(p.P * x);
  return obj;
}

// Active-set polish: solve the equality-constrained KKT system on the
// constraints the barrier path ends nearly active on.  The barrier iterate
// carries an O(eps * t) noise floor in its gradient (the active slacks are
// computed with cancellation), so a direct linear solve recovers several
// digits.  Only attempted for programs without cone blocks.
bool polish(const Prepared& pre, double t, VectorXd& x, KktResiduals& kkt) {
  const ConicProgram& p = *pre.prog;
  if (!p.cones.empty()) return false;
  const int n = p.num_vars;
  const int m_eq = static_cast<int>(p.b.size());
  const int m_in = static_cast<int>(p.h.size());

  // Active when the barrier multiplier 1/(t s) dominates the slack.
  std::vector<int> active;
  const VectorXd slack = m_in > 0 ? VectorXd(p.h - pre.G * x) : VectorXd();
  const double cut = 1.0 / std::sqrt(std::max(t, 1.0));
  for (int i = 0; i < m_in; ++i) {
    if (slack[i] < cut) active.push_back(i);
  }

  for (int attempt = 0; attempt < 10; ++attempt) {
    const int ma = static_cast<int>(active.size());
    const int rows = n + m_eq + ma;
    Eigen::MatrixXd kmat = Eigen::MatrixXd::Zero(rows, rows);
    kmat.topLeftCorner(n, n) = Eigen::MatrixXd(p.P);
    kmat.topLeftCorner(n, n).diagonal().array() += 1e-12;
    if (m_eq > 0) {
      const Eigen::MatrixXd A(p.A);
      kmat.block(n, 0, m_eq, n) = A;
      kmat.block(0, n, n, m_eq) = A.transpose();
    }
    for (int j = 0; j < ma; ++j) {
      const Eigen::RowVectorXd row = pre.G.row(active[j]);
      kmat.block(n + m_eq + j, 0, 1, n) = row;
      kmat.block(0, n + m_eq + j, n, 1) = row.transpose();
    }
    VectorXd rhs(rows);
    rhs.head(n) = -p.q;
    if (m_eq > 0) rhs.segment(n, m_eq) = p.b;
    for (int j = 0; j < ma; ++j) rhs[n + m_eq + j] = p.h[active[j]];

    Eigen::FullPivLU<Eigen::MatrixXd> lu(kmat);
    if (!lu.isInvertible()) return false;
    const VectorXd sol = lu.solve(rhs);
    const VectorXd xp = sol.head(n);
    const VectorXd mult = sol.tail(ma);

    // Drop active rows with negative multipliers, add violated rows.
    bool clean = true;
    std::vector<int> next;
    for (int j = 0; j < ma; ++j) {
      if (mult[j] < -1e-9) {
        clean = false;
      } else {
        next.push_back(active[j]);
      }
    }
    if (m_in > 0) {
      const VectorXd sp = p.h - pre.G * xp;
      for (int i = 0; i < m_in; ++i) {
        if (sp[i] < -1e-9 &&
            std::find(next.begin(), next.end(), i) == next.end()) {
          next.push_back(i);
          clean = false;
        }
      }
    }
    if (!clean) {
      std::sort(next.begin(), next.end());
      if (next == active) return false;  // cycling; keep the barrier point
      active = std::move(next);
      continue;
    }

    VectorXd r_dual = p.q;
    if (p.P.nonZeros() > 0) r_dual += p.P * xp;
    if (m_eq > 0) r_dual += p.A.transpose() * sol.segment(n, m_eq);
    for (int j = 0; j < ma; ++j) {
      r_dual += mult[j] * VectorXd(pre.G.row(active[j]).transpose());
    }
    KktResiduals out;
    out.stationarity = r_dual.lpNorm<Eigen::Infinity>();
    if (m_eq > 0) {
      out.primal_eq = (p.A * xp - p.b).lpNorm<Eigen::Infinity>();
    }
    if (m_in > 0) {
      out.primal_ineq = std::max(0.0, -(p.h - pre.G * xp).minCoeff());
    }
    out.complementarity = 0.0;
    if (out.stationarity > kkt.stationarity ||
        out.primal_ineq > std::max(kkt.primal_ineq, 1e-9)) {
      return false;
    }
    x = xp;
    kkt = out;
    return true;
  }
  return false;
}

KktResiduals compute_kkt(const Prepared& pre, const VectorXd& x,
                         const VectorXd& y, double t) {
  const ConicProgram& p = *pre.prog;
  KktResiduals k;
  VectorXd phi_grad;
  VectorXd r;
  if (barrier_terms(pre, x, phi_grad, nullptr)) {
    residual(pre, x, y, t, phi_grad, r);
    k.stationarity = r.head(p.num_vars).lpNorm<Eigen::Infinity>();
    if (p.b.size() > 0) k.primal_eq = r.tail(p.b.size()).lpNorm<Eigen::Infinity>();
  } else {
    k.stationarity = std::numeric_limits<double>::infinity();
  }
  if (p.h.size() > 0) {
    const VectorXd s = p.h - pre.G * x;
    k.primal_ineq = std::max(0.0, -s.minCoeff());
  }
  for (std::size_t c = 0; c < p.cones.size(); ++c) {
    const VectorXd yv = pre.cone_rows[c] * x + p.cones[c].d;
    const double omega = yv[0] * yv[1] - yv.tail(yv.size() - 2).squaredNorm();
    k.primal_ineq = std::max({k.primal_ineq, -omega, -yv[0], -yv[1]});
  }
  k.complementarity = pre.barrier_degree / t;
  return k;
}

}  // namespace

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::MaxIters: return "max_iters";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

std::string ConicProgram::dump() const {
  std::ostringstream os;
  os.precision(17);
  auto emit = [&os](const char* name, const SpMat& m) {
    os << name << " " << m.rows() << " " << m.cols() << "\n";
    const Eigen::MatrixXd dense(m);
    for (Eigen::Index r = 0; r < dense.rows(); ++r) {
      for (Eigen::Index c = 0; c < dense.cols(); ++c) {
        os << dense(r, c) << (c + 1 == dense.cols() ? "\n" : " ");
      }
    }
  };
  auto emit_vec = [&os](const char* name, const VectorXd& v) {
    os << name << " " << v.size() << "\n";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      os << v[i] << (i + 1 == v.size() ? "\n" : " ");
    }
    if (v.size() == 0) os << "\n";
  };
  os << "conic_program num_vars " << num_vars << "\n";
  emit("P", P);
  emit_vec("q", q);
  emit("A", A);
  emit_vec("b", b);
  emit("G", G);
  emit_vec("h", h);
  os << "cones " << cones.size() << "\n";
  for (const auto& blk : cones) {
    emit("C", blk.C);
    emit_vec("d", blk.d);
  }
  return os.str();
}

Solution solve(const ConicProgram& program, const SolveOptions& options) {
  Solution sol;
  sol.values = VectorXd::Zero(program.num_vars);

  if (options.dump_path) {
    std::ofstream out(*options.dump_path);
    out << program.dump();
  }

  const Prepared pre = prepare(program);

  VectorXd x0 = options.initial_point.value_or(VectorXd::Zero(program.num_vars));
  if (x0.size() != program.num_vars) x0 = VectorXd::Zero(program.num_vars);

  int newton_budget = options.max_iters;

  if (pre.barrier_degree > 0 && !strictly_feasible(pre, x0, 1e-9)) {
    // Phase I.
    const ConicProgram ph = phase_one_program(program);
    const Prepared ph_pre = prepare(ph);
    VectorXd xs(program.num_vars + 1);
    xs.head(program.num_vars) = x0;
    xs[program.num_vars] = needed_relaxation(pre, x0) + 1.0;
    const int s_idx = program.num_vars;
    auto found = [s_idx](const VectorXd& v) { return v[s_idx] < -1e-6; };
    PathOutcome ph_out = follow_path(ph_pre, xs, 1e-8, newton_budget, found);
    newton_budget -= ph_out.newton;
    sol.newton_iterations += ph_out.newton;
    if (ph_out.early_stopped || ph_out.x[s_idx] < 0.0) {
      x0 = ph_out.x.head(program.num_vars);
    } else if (ph_out.converged) {
      sol.status = SolveStatus::Infeasible;
      return sol;
    } else {
      sol.status = ph_out.numerical_failure ? SolveStatus::NumericalFailure
                                            : SolveStatus::MaxIters;
      return sol;
    }
  }

  PathOutcome out = follow_path(pre, x0, options.tol, newton_budget, nullptr);
  sol.newton_iterations += out.newton;
  sol.values = out.x;
  sol.kkt = compute_kkt(pre, out.x, out.y, out.t);
  if (out.converged) polish(pre, out.t, sol.values, sol.kkt);
  sol.objective = objective_value(program, sol.values);

  if (out.converged && sol.kkt.stationarity <= 1e-6 &&
      sol.kkt.primal_eq <= 1e-6 && sol.kkt.primal_ineq <= 1e-6) {
    sol.status = SolveStatus::Optimal;
  } else if (out.numerical_failure) {
    sol.status = SolveStatus::NumericalFailure;
  } else {
    sol.status = SolveStatus::MaxIters;
  }
  return sol;
}

}  // namespace croa
