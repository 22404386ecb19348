#include "maskdiff/schedule.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace maskdiff {

MaskSchedule::MaskSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw std::invalid_argument("MaskSchedule: empty beta vector");
  alphas_.resize(betas_.size() + 1);
  alphas_[0] = 1.0;
  for (size_t t = 0; t < betas_.size(); ++t) {
    double b = betas_[t];
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("MaskSchedule: beta outside [0, 1]");
    alphas_[t + 1] = alphas_[t] * (1.0 - b);
  }
  strictly_progressing_ = true;
  for (size_t t = 1; t < alphas_.size(); ++t) {
    if (!(alphas_[t] < alphas_[t - 1]) || !(alphas_[t] < 1.0)) strictly_progressing_ = false;
  }
  reverse_evaluable_ = alphas_[1] < 1.0; // alpha is nonincreasing
}

MaskSchedule MaskSchedule::for_reverse(std::vector<double> betas) {
  MaskSchedule s(std::move(betas));
  s.require_progressing("MaskSchedule::for_reverse");
  return s;
}

MaskSchedule MaskSchedule::linear(int horizon) {
  if (horizon < 1) throw std::invalid_argument("MaskSchedule::linear: horizon must be >= 1");
  // alpha_t = 1 - t/T  =>  beta_t = 1 / (T - t + 1)
  std::vector<double> betas(horizon);
  for (int t = 1; t <= horizon; ++t) betas[t - 1] = 1.0 / static_cast<double>(horizon - t + 1);
  return for_reverse(std::move(betas));
}

double MaskSchedule::beta(int t) const {
  if (t < 1 || t > horizon()) throw std::out_of_range("MaskSchedule::beta: t outside [1, T]");
  return betas_[t - 1];
}

double MaskSchedule::alpha(int t) const {
  if (t < 0 || t > horizon()) throw std::out_of_range("MaskSchedule::alpha: t outside [0, T]");
  return alphas_[t];
}

void MaskSchedule::require_progressing(const char* what) const {
  if (!strictly_progressing_)
    throw std::invalid_argument(std::string(what) + ": schedule is not strictly progressing");
}

void MaskSchedule::require_evaluable(const char* what) const {
  if (!reverse_evaluable_)
    throw std::invalid_argument(std::string(what) + ": schedule has alpha_t = 1 for some t >= 1");
}

double MaskSchedule::stay_coeff(int t) const {
  if (t < 1 || t > horizon()) throw std::out_of_range("MaskSchedule::stay_coeff: t outside [1, T]");
  require_evaluable("MaskSchedule::stay_coeff");
  return (1.0 - alphas_[t - 1]) / (1.0 - alphas_[t]);
}

double MaskSchedule::unmask_coeff(int t) const {
  if (t < 1 || t > horizon()) throw std::out_of_range("MaskSchedule::unmask_coeff: t outside [1, T]");
  require_evaluable("MaskSchedule::unmask_coeff");
  return (alphas_[t - 1] - alphas_[t]) / (1.0 - alphas_[t]);
}

std::string MaskSchedule::to_json() const {
  nlohmann::json j;
  j["T"] = horizon();
  j["betas"] = betas_;
  return j.dump();
}

MaskSchedule MaskSchedule::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("T") || !j.contains("betas"))
    throw std::invalid_argument("MaskSchedule::from_json: missing T or betas");
  auto betas = j.at("betas").get<std::vector<double>>();
  if (static_cast<int>(betas.size()) != j.at("T").get<int>())
    throw std::invalid_argument("MaskSchedule::from_json: T does not match betas length");
  return MaskSchedule(std::move(betas)); // alphas recomputed, never trusted from disk
}

MaskSchedule MaskSchedule::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("MaskSchedule::load: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void MaskSchedule::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("MaskSchedule::save: cannot open " + path);
  out << to_json() << "\n";
}

} // namespace maskdiff
