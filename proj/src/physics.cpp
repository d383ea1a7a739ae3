#include "apse/physics.hpp"

#include <map>
#include <sstream>

namespace apse {

namespace {

using RowMajorCMat = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

// A power function written as s = V_anchor * conj(sum_j coeff_j V_j). Both the
// injection at bus k (coefficients = row k of Ybus) and the sending-end flow of
// line a->b (coefficients {a: y, b: -y}) have this shape. In Cartesian
// coordinates P = Re(s) and Q = Im(s) are sums of products of two coordinates,
// which is what makes the expansion exact at second order.
struct PowerTerm {
  Index bus;
  Complex coeff;
};

struct PowerRow {
  Index anchor;
  std::vector<PowerTerm> terms;
  bool reactive;
};

std::vector<PowerRow> power_rows(const AdmittanceModel& model, const MeasurementSet& set) {
  std::vector<PowerRow> rows;
  rows.reserve(static_cast<size_t>(set.flow_rows() + set.inj_rows()));

  for (int block = 0; block < 2; ++block) {
    for (Index line : set.flow_lines) {
      const auto& e = model.graph().edges[static_cast<size_t>(line)];
      const Complex y = model.line_admittances()(line);
      rows.push_back({e.from, {{e.from, y}, {e.to, -y}}, block == 1});
    }
  }

  const RowMajorCMat ybus = model.ybus();
  for (int block = 0; block < 2; ++block) {
    for (Index bus : set.inj_buses) {
      PowerRow row{bus, {}, block == 1};
      for (RowMajorCMat::InnerIterator it(ybus, bus); it; ++it) {
        row.terms.push_back({it.col(), it.value()});
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

class UpperAccumulator {
 public:
  // Adds the contribution of c * x_u * x_v to a symmetric H with 1/2 x^T H x form.
  void add_product(Index u, Index v, double c) {
    if (u < 0 || v < 0 || c == 0.0) return;
    if (u == v) {
      entries_[{u, u}] += 2.0 * c;
    } else {
      entries_[{std::min(u, v), std::max(u, v)}] += c;
    }
  }

  SpMat build(Index dim) const {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(2 * entries_.size());
    for (const auto& [key, value] : entries_) {
      if (value == 0.0) continue;
      triplets.emplace_back(key.first, key.second, value);
      if (key.first != key.second) triplets.emplace_back(key.second, key.first, value);
    }
    SpMat h(dim, dim);
    h.setFromTriplets(triplets.begin(), triplets.end());
    h.makeCompressed();
    return h;
  }

 private:
  std::map<std::pair<Index, Index>, double> entries_;
};

struct Coordinates {
  Index p;
  const AdmittanceModel& model;

  Index real(Index bus) const { return model.state_index(bus); }
  Index imag(Index bus) const {
    const Index k = model.state_index(bus);
    return k < 0 ? -1 : p + k;
  }
};

SpMat power_row_hessian(const PowerRow& row, const Coordinates& c) {
  UpperAccumulator acc;
  const Index ea = c.real(row.anchor);
  const Index fa = c.imag(row.anchor);
  for (const auto& t : row.terms) {
    const double g = t.coeff.real();
    const double b = t.coeff.imag();
    const Index ej = c.real(t.bus);
    const Index fj = c.imag(t.bus);
    if (!row.reactive) {
      // P = e_a sum(G e - B f) + f_a sum(G f + B e)
      acc.add_product(ea, ej, g);
      acc.add_product(ea, fj, -b);
      acc.add_product(fa, fj, g);
      acc.add_product(fa, ej, b);
    } else {
      // Q = f_a sum(G e - B f) - e_a sum(G f + B e)
      acc.add_product(fa, ej, g);
      acc.add_product(fa, fj, -b);
      acc.add_product(ea, fj, -g);
      acc.add_product(ea, ej, -b);
    }
  }
  return acc.build(2 * c.p);
}

void power_row_gradient(const PowerRow& row, const CVec& v, const Coordinates& c,
                        Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) {
  const double ea_val = v(row.anchor).real();
  const double fa_val = v(row.anchor).imag();
  double sum_re = 0.0;  // sum Re(c_j V_j)
  double sum_im = 0.0;  // sum Im(c_j V_j)
  for (const auto& t : row.terms) {
    const Complex cv = t.coeff * v(t.bus);
    sum_re += cv.real();
    sum_im += cv.imag();
  }
  auto add = [&](Index col, double value) {
    if (col >= 0) out(col) += value;
  };
  for (const auto& t : row.terms) {
    const double g = t.coeff.real();
    const double b = t.coeff.imag();
    if (!row.reactive) {
      add(c.real(t.bus), ea_val * g + fa_val * b);
      add(c.imag(t.bus), -ea_val * b + fa_val * g);
    } else {
      add(c.real(t.bus), fa_val * g - ea_val * b);
      add(c.imag(t.bus), -fa_val * b - ea_val * g);
    }
  }
  if (!row.reactive) {
    add(c.real(row.anchor), sum_re);
    add(c.imag(row.anchor), sum_im);
  } else {
    add(c.real(row.anchor), -sum_im);
    add(c.imag(row.anchor), sum_re);
  }
}

void check_lines(const AdmittanceModel& model, const std::vector<Index>& lines) {
  for (Index line : lines) {
    if (line < 0 || line >= model.line_count()) {
      std::ostringstream msg;
      msg << "flow requested on line " << line << ", network has " << model.line_count()
          << " lines";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
  }
}

// Complex sending-end power of each listed line: V_a conj(y (V_a - V_b)),
// written with the selector/incidence matrices.
CVec line_powers(const CVec& v, const AdmittanceModel& model, const std::vector<Index>& lines) {
  check_lines(model, lines);
  const CVec sending = model.sending_selector().cast<Complex>() * v;
  const CVec drop = model.incidence().cast<Complex>() * v;
  CVec out(static_cast<Index>(lines.size()));
  for (size_t k = 0; k < lines.size(); ++k) {
    const Index l = lines[k];
    out(static_cast<Index>(k)) = sending(l) * std::conj(model.line_admittances()(l) * drop(l));
  }
  return out;
}

CVec bus_powers(const CVec& v, const AdmittanceModel& model) {
  const CVec current = model.ybus() * v;
  return v.cwiseProduct(current.conjugate());
}

}  // namespace

Vec eval_injections(const PolarState& x, const AdmittanceModel& model) {
  const CVec s = bus_powers(model.bus_voltages(x), model);
  const Index p = model.state_count();
  Vec out(2 * p);
  for (Index k = 0; k < p; ++k) {
    const Complex sk = s(model.bus_index(k));
    out(k) = sk.real();
    out(p + k) = sk.imag();
  }
  return out;
}

Vec eval_flows(const PolarState& x, const AdmittanceModel& model, const std::vector<Index>& lines) {
  const CVec s = line_powers(model.bus_voltages(x), model, lines);
  Vec out(2 * s.size());
  out << s.real(), s.imag();
  return out;
}

Vec eval_magnitudes(const PolarState& x, const AdmittanceModel& model,
                    const std::vector<Index>& buses) {
  Vec out(static_cast<Index>(buses.size()));
  for (size_t k = 0; k < buses.size(); ++k) {
    const Index state = buses[k] >= 0 && buses[k] < model.bus_count()
                            ? model.state_index(buses[k])
                            : -2;
    if (state == -1) {
      throw Error(ErrorKind::InvalidMeasurement,
                  "magnitude requested at the substation, which is not a state");
    }
    if (state < 0) {
      std::ostringstream msg;
      msg << "magnitude requested at bus " << buses[k] << " outside the network";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
    out(static_cast<Index>(k)) = x.magnitude(state);
  }
  return out;
}

Mat jacobian_polar(const PolarState& x, const AdmittanceModel& model, const MeasurementSet& set) {
  const Index p = model.state_count();
  const CVec v = model.bus_voltages(x);
  const CVec current = model.ybus() * v;
  Mat jac = Mat::Zero(set.rows(), 2 * p);

  // Unit voltage direction V/|V| (the slack column is never used).
  CVec unit(v.size());
  for (Index b = 0; b < v.size(); ++b) unit(b) = v(b) / std::abs(v(b));

  auto scatter = [&](Index row_p, Index row_q, Index bus, Complex d_vm, Complex d_va) {
    const Index col = model.state_index(bus);
    if (col < 0) return;
    jac(row_p, col) += d_vm.real();
    jac(row_q, col) += d_vm.imag();
    jac(row_p, p + col) += d_va.real();
    jac(row_q, p + col) += d_va.imag();
  };

  for (Index t = 0; t < set.mag_rows(); ++t) {
    jac(t, model.state_index(set.mag_buses[static_cast<size_t>(t)])) = 1.0;
  }

  const Complex j1{0.0, 1.0};
  const Index nf = static_cast<Index>(set.flow_lines.size());
  check_lines(model, set.flow_lines);
  for (Index t = 0; t < nf; ++t) {
    const Index l = set.flow_lines[static_cast<size_t>(t)];
    const auto& e = model.graph().edges[static_cast<size_t>(l)];
    const Complex y = model.line_admittances()(l);
    const Complex va = v(e.from);
    const Complex vb = v(e.to);
    const Complex i_f = y * (va - vb);
    const Index rp = set.flow_offset() + t;
    const Index rq = rp + nf;
    // dS_f/dVm = diag(Vf) conj(Yf diag(V/|V|)) + conj(diag(If)) Cf diag(V/|V|)
    // dS_f/dVa = j (conj(diag(If)) Cf diag(V) - diag(Vf) conj(Yf diag(V)))
    scatter(rp, rq, e.from, va * std::conj(y * unit(e.from)) + std::conj(i_f) * unit(e.from),
            j1 * (std::conj(i_f) * va - va * std::conj(y * va)));
    scatter(rp, rq, e.to, va * std::conj(-y * unit(e.to)), j1 * (-va * std::conj(-y * vb)));
  }

  const Index ns = static_cast<Index>(set.inj_buses.size());
  std::vector<Index> device_of_bus(static_cast<size_t>(model.bus_count()), -1);
  for (Index t = 0; t < ns; ++t) device_of_bus[static_cast<size_t>(set.inj_buses[static_cast<size_t>(t)])] = t;

  // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
  // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
  const SpCMat& ybus = model.ybus();
  for (Index col = 0; col < ybus.outerSize(); ++col) {
    for (SpCMat::InnerIterator it(ybus, col); it; ++it) {
      const Index bus = it.row();
      const Index t = device_of_bus[static_cast<size_t>(bus)];
      if (t < 0) continue;
      const Complex ykj = it.value();
      scatter(set.inj_offset() + t, set.inj_offset() + ns + t, col,
              v(bus) * std::conj(ykj * unit(col)), -j1 * v(bus) * std::conj(ykj * v(col)));
    }
  }
  for (Index t = 0; t < ns; ++t) {
    const Index bus = set.inj_buses[static_cast<size_t>(t)];
    scatter(set.inj_offset() + t, set.inj_offset() + ns + t, bus,
            std::conj(current(bus)) * unit(bus), j1 * v(bus) * std::conj(current(bus)));
  }
  return jac;
}

Vec cartesian_outputs(const CartesianState& xc, const AdmittanceModel& model,
                      const MeasurementSet& set) {
  const CVec v = model.bus_voltages(xc);
  Vec out(set.rows());
  for (Index t = 0; t < set.mag_rows(); ++t) {
    out(t) = std::norm(v(set.mag_buses[static_cast<size_t>(t)]));
  }
  const CVec flows = line_powers(v, model, set.flow_lines);
  out.segment(set.flow_offset(), flows.size()) = flows.real();
  out.segment(set.flow_offset() + flows.size(), flows.size()) = flows.imag();

  const CVec s = bus_powers(v, model);
  const Index ns = static_cast<Index>(set.inj_buses.size());
  for (Index t = 0; t < ns; ++t) {
    const Complex sk = s(set.inj_buses[static_cast<size_t>(t)]);
    out(set.inj_offset() + t) = sk.real();
    out(set.inj_offset() + ns + t) = sk.imag();
  }
  return out;
}

Mat JacobianBlocks::stacked() const {
  Mat out(magnitude.rows() + flow.rows() + injection.rows(), magnitude.cols());
  out << magnitude, flow, injection;
  return out;
}

Mat JacobianBlocks::weighted(const Vec& w) const { return w.asDiagonal() * stacked(); }

JacobianBlocks jacobian_cartesian(const CartesianState& xc, const AdmittanceModel& model,
                                  const MeasurementSet& set) {
  const Index p = model.state_count();
  const Coordinates coords{p, model};
  const CVec v = model.bus_voltages(xc);

  JacobianBlocks blocks;
  blocks.magnitude = Mat::Zero(set.mag_rows(), 2 * p);
  for (Index t = 0; t < set.mag_rows(); ++t) {
    const Index k = model.state_index(set.mag_buses[static_cast<size_t>(t)]);
    blocks.magnitude(t, k) = 2.0 * xc.real(k);
    blocks.magnitude(t, p + k) = 2.0 * xc.imag(k);
  }

  const auto rows = power_rows(model, set);
  blocks.flow = Mat::Zero(set.flow_rows(), 2 * p);
  blocks.injection = Mat::Zero(set.inj_rows(), 2 * p);
  for (Index r = 0; r < set.flow_rows(); ++r) {
    power_row_gradient(rows[static_cast<size_t>(r)], v, coords, blocks.flow.row(r));
  }
  for (Index r = 0; r < set.inj_rows(); ++r) {
    power_row_gradient(rows[static_cast<size_t>(set.flow_rows() + r)], v, coords,
                       blocks.injection.row(r));
  }
  return blocks;
}

HessianTensor::HessianTensor(Index dim, std::vector<SpMat> rows)
    : dim_(dim), rows_(std::move(rows)) {}

Vec HessianTensor::quadratic(const Vec& d) const {
  Vec out(rows());
  for (Index i = 0; i < rows(); ++i) {
    const SpMat& h = rows_[static_cast<size_t>(i)];
    double sum = 0.0;
    for (Index k = 0; k < h.outerSize(); ++k) {
      for (SpMat::InnerIterator it(h, k); it; ++it) {
        sum += it.value() * (d(k) * d(it.row()));
      }
    }
    out(i) = 0.5 * sum;
  }
  return out;
}

Vec HessianTensor::bilinear(const Vec& u, const Vec& v) const {
  Vec out(rows());
  for (Index i = 0; i < rows(); ++i) {
    const SpMat& h = rows_[static_cast<size_t>(i)];
    out(i) = 0.5 * (u.dot(h * v) + v.dot(h * u));
  }
  return out;
}

Eigen::SparseVector<double> HessianTensor::kron_row(Index i) const {
  const SpMat& h = rows_[static_cast<size_t>(i)];
  Eigen::SparseVector<double> out(dim_ * dim_);
  out.reserve(h.nonZeros());
  for (Index k = 0; k < h.outerSize(); ++k) {
    for (SpMat::InnerIterator it(h, k); it; ++it) {
      out.insertBack(k * dim_ + it.row()) = it.value();
    }
  }
  return out;
}

Vec HessianTensor::kron_contract(const Vec& d) const {
  Vec out(rows());
  for (Index i = 0; i < rows(); ++i) {
    const Eigen::SparseVector<double> row = kron_row(i);
    double sum = 0.0;
    for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it) {
      const Index k = it.index() / dim_;
      const Index r = it.index() % dim_;
      sum += it.value() * (d(k) * d(r));
    }
    out(i) = sum;
  }
  return out;
}

SpMat HessianTensor::combine(const Vec& coeffs) const {
  SpMat out(dim_, dim_);
  for (Index i = 0; i < rows(); ++i) {
    if (coeffs(i) != 0.0) out += coeffs(i) * rows_[static_cast<size_t>(i)];
  }
  return out;
}

HessianTensor HessianTensor::scaled(const Vec& w) const {
  std::vector<SpMat> rows;
  rows.reserve(rows_.size());
  for (Index i = 0; i < this->rows(); ++i) rows.push_back(w(i) * rows_[static_cast<size_t>(i)]);
  return HessianTensor(dim_, std::move(rows));
}

HessianTensor hessian_tensors(const AdmittanceModel& model, const MeasurementSet& set) {
  set.validate(model);
  const Index p = model.state_count();
  const Coordinates coords{p, model};
  std::vector<SpMat> rows;
  rows.reserve(static_cast<size_t>(set.rows()));

  for (Index bus : set.mag_buses) {
    UpperAccumulator acc;
    acc.add_product(coords.real(bus), coords.real(bus), 1.0);
    acc.add_product(coords.imag(bus), coords.imag(bus), 1.0);
    rows.push_back(acc.build(2 * p));
  }
  for (const auto& row : power_rows(model, set)) {
    rows.push_back(power_row_hessian(row, coords));
  }
  return HessianTensor(2 * p, std::move(rows));
}

Vec QuadraticResidualModel::weighted_measurement(const MeasurementProfile& profile) const {
  Vec r = profile.stacked();
  if (r.size() != rows()) {
    throw Error(ErrorKind::DimensionMismatch, "profile length does not match quadratic model");
  }
  r.head(mag_rows) = r.head(mag_rows).cwiseAbs2();
  return weights.cwiseProduct(r);
}

QuadraticResidualModel build_quadratic_model(const CartesianState& xc0,
                                             const AdmittanceModel& model,
                                             const MeasurementSet& set,
                                             const CovarianceModel& squared_covariance) {
  if (squared_covariance.size() != set.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "covariance does not match measurement set");
  }
  QuadraticResidualModel qrm;
  qrm.expansion_point = xc0;
  qrm.weights = squared_covariance.weight_sqrt();
  qrm.constant = qrm.weights.cwiseProduct(cartesian_outputs(xc0, model, set));
  qrm.jacobian = jacobian_cartesian(xc0, model, set).weighted(qrm.weights);
  qrm.hessian = hessian_tensors(model, set).scaled(qrm.weights);
  qrm.mag_rows = set.mag_rows();
  return qrm;
}

Vec quadratic_residual(const QuadraticResidualModel& qrm, const Vec& dx,
                       const Vec& weighted_profile) {
  if (dx.size() != qrm.dim() || weighted_profile.size() != qrm.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "quadratic_residual dimension mismatch");
  }
  return qrm.constant + qrm.jacobian * dx + qrm.hessian.quadratic(dx) - weighted_profile;
}

}  // namespace apse
