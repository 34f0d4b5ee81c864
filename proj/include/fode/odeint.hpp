#pragma once

#include <functional>
#include <vector>

#include "fode/model.hpp"

namespace fode::odeint {

enum class Method { rk4, dopri5 };

const char* method_name(Method m);
Method parse_method(const std::string& s);

struct SolverConfig {
  Method method = Method::dopri5;
  std::size_t rk4_steps = 8;
  double rtol = 1e-6;
  double atol = 1e-8;
  std::size_t max_steps = 10000;
  double t0 = 0.0;
  double t1 = 1.0;
};

struct SolveResult {
  std::vector<double> final_state;
  std::size_t n_field_evals = 0;
  std::size_t n_rejected = 0;
  double max_accepted_err = 0.0;  // largest accepted error estimate, solver norm
  std::vector<double> ts;         // recorded trajectory (optional)
  std::vector<std::vector<double>> states;
};

using Field = std::function<void(double, std::span<const double>, std::span<double>)>;

// Wraps the dense-map field evaluation; the model must outlive the field.
Field model_field(const FodeModel& m);

SolveResult rk4_solve(const Field& f, std::span<const double> x0, double t0, double t1,
                      std::size_t steps, std::size_t record_every = 0);

SolveResult dopri5_solve(const Field& f, std::span<const double> x0, double t0, double t1,
                         double rtol, double atol, std::size_t max_steps = 10000);

// Integrates through an increasing time grid, returning one row per grid
// point; ts[0] is the initial time and maps to x0 itself.
Mat dopri5_sample(const Field& f, std::span<const double> x0, std::span<const double> ts,
                  double rtol, double atol, std::size_t max_steps = 100000);

SolveResult solve(const Field& f, std::span<const double> x0, const SolverConfig& cfg);

// Fixed-step RK4 with every stage recorded on the tape; backward through the
// returned node yields exact gradients of the discrete solution.
ad::NodeId solve_unrolled(ad::Tape& tape, const FodeModel& m, const FieldStage& s,
                          ad::NodeId x0, double t0, double t1, std::size_t steps);

struct AdjointResult {
  std::vector<std::vector<double>> theta;  // w1,b1,w2,b2,w3,b3 order
  std::vector<double> x0;
  std::size_t n_field_evals = 0;
};

// Gradient via the adjoint system: integrates (state, adjoint, parameter
// accumulator) in reversed time from x1 with the adjoint seeded by dL/dx(t1).
// The output filter sits outside the ODE, so K is not part of this system.
AdjointResult adjoint_grad(const FodeModel& m, std::span<const double> x1,
                           std::span<const double> loss_grad_t1, const SolverConfig& cfg);

}  // namespace fode::odeint
