#include "climatellm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "climatellm/backbone.hpp"
#include "climatellm/errors.hpp"

namespace climatellm {

using nlohmann::json;

GridField climatology(const std::vector<GridField>& series) {
    if (series.empty()) throw InvalidInput("climatology of an empty series");
    std::vector<double> sum(series.front().size(), 0.0);
    for (const GridField& f : series) {
        if (!f.same_grid(series.front())) throw ShapeError("climatology: grids differ");
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += f.values()[i];
    }
    for (double& x : sum) x /= static_cast<double>(series.size());
    return series.front().with_values(std::move(sum));
}

std::vector<double> climatology(const Dataset& data, const SplitRange& range) {
    if (range.size() == 0) throw InvalidInput("climatology of an empty range");
    std::vector<double> sum(data.manifest.step_size(), 0.0);
    for (std::size_t t = range.begin; t < range.end; ++t) {
        auto s = data.step(t);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += s[i];
    }
    for (double& x : sum) x /= static_cast<double>(range.size());
    return sum;
}

std::vector<double> eval_rmse(std::span<const double> pred, std::span<const double> truth,
                              std::size_t n_vars, const LatWeights& w, std::size_t n_lon,
                              LossVariant variant) {
    return weighted_rmse(pred, truth, n_vars, w, n_lon, variant);
}

std::vector<double> eval_rmse(const GridField& pred, const GridField& truth, const LatWeights& w,
                              LossVariant variant) {
    return weighted_rmse(pred, truth, w, variant);
}

std::vector<std::optional<double>> eval_acc(std::span<const double> pred,
                                            std::span<const double> truth,
                                            std::span<const double> clim, std::size_t n_vars,
                                            const LatWeights& w, std::size_t n_lon) {
    const std::size_t M = w.alpha.size(), plane = M * n_lon;
    if (pred.size() != n_vars * plane || truth.size() != pred.size() || clim.size() != pred.size()) {
        throw ShapeError("eval_acc: shapes differ");
    }
    const auto L = w.mean_one();
    std::vector<std::optional<double>> out(n_vars);
    for (std::size_t v = 0; v < n_vars; ++v) {
        double num = 0.0, pp = 0.0, tt = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < n_lon; ++n) {
                const std::size_t i = v * plane + m * n_lon + n;
                const double a = pred[i] - clim[i], b = truth[i] - clim[i];
                num += L[m] * a * b;
                pp += L[m] * a * a;
                tt += L[m] * b * b;
            }
        }
        if (pp > 0.0 && tt > 0.0) out[v] = std::clamp(num / std::sqrt(pp * tt), -1.0, 1.0);
    }
    return out;
}

std::vector<std::optional<double>> eval_acc(const GridField& pred, const GridField& truth,
                                            const GridField& clim, const LatWeights& w) {
    if (!pred.same_grid(truth) || !pred.same_grid(clim)) throw ShapeError("eval_acc: grids differ");
    if (w.alpha.size() != pred.n_lat()) throw ShapeError("eval_acc: weight count mismatch");
    return eval_acc(pred.values(), truth.values(), clim.values(), pred.n_vars(), w, pred.n_lon());
}

// ---------------------------------------------------------------------------

const MetricCell& EvalReport::find(const std::string& forecaster, const std::string& variable,
                                   std::size_t lead) const {
    for (const MetricCell& c : cells) {
        if (c.forecaster == forecaster && c.variable == variable && c.lead_steps == lead) return c;
    }
    throw InvalidInput("no metric cell for " + forecaster + "/" + variable + "/" +
                       std::to_string(lead));
}

double EvalReport::mean_rmse(const std::string& forecaster, std::size_t lead) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const MetricCell& c : cells) {
        if (c.forecaster == forecaster && c.lead_steps == lead) {
            s += c.rmse;
            ++n;
        }
    }
    if (n == 0) throw InvalidInput("no metric cells for " + forecaster);
    return s / static_cast<double>(n);
}

std::optional<double> EvalReport::mean_acc(const std::string& forecaster, std::size_t lead) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const MetricCell& c : cells) {
        if (c.forecaster == forecaster && c.lead_steps == lead) {
            if (!c.acc) return std::nullopt;
            s += *c.acc;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

json EvalReport::to_json() const {
    json rows = json::array();
    for (const MetricCell& c : cells) {
        rows.push_back({{"forecaster", c.forecaster},
                        {"variable", c.variable},
                        {"lead_steps", c.lead_steps},
                        {"lead_hours", c.lead_hours},
                        {"rmse", c.rmse},
                        {"rmse_literal", c.rmse_literal},
                        {"acc", c.acc ? json(*c.acc) : json(nullptr)},
                        {"acc_windows", c.acc_windows}});
    }
    return {{"dataset", dataset},
            {"checkpoint_hash", checkpoint_hash},
            {"config_hash", config_hash},
            {"metric_variant", metric_variant},
            {"windows", windows},
            {"metrics", rows}};
}

namespace {

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(10);
    os << x;
    return os.str();
}

}  // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "forecaster,variable,lead_steps,lead_hours,rmse,rmse_literal,acc,config_hash\n";
    for (const MetricCell& c : cells) {
        os << c.forecaster << ',' << c.variable << ',' << c.lead_steps << ',' << fmt(c.lead_hours)
           << ',' << fmt(c.rmse) << ',' << fmt(c.rmse_literal) << ','
           << (c.acc ? fmt(*c.acc) : std::string("null")) << ',' << config_hash << '\n';
    }
    return os.str();
}

std::size_t lead_steps(double lead_hours, double timestep_hours) {
    const double k = lead_hours / timestep_hours;
    const double r = std::round(k);
    if (!(lead_hours > 0.0) || std::abs(k - r) > 1e-9 || r < 1.0) {
        throw InvalidInput("lead time " + fmt(lead_hours) + " h is not a positive multiple of the " +
                           fmt(timestep_hours) + " h timestep");
    }
    return static_cast<std::size_t>(r);
}

EvalReport evaluate(const Model<float>& model, const Dataset& data, const EvalOptions& options) {
    const DatasetManifest& m = data.manifest;
    const ModelConfig& c = model.config;
    if (m.n_vars() != c.n_vars || m.n_lat() != c.n_lat || m.n_lon() != c.n_lon) {
        throw ShapeError("dataset grid differs from the model grid");
    }
    if (options.lead_hours.empty()) throw InvalidInput("no lead times requested");
    std::vector<std::size_t> leads;
    for (double h : options.lead_hours) leads.push_back(lead_steps(h, m.timestep_hours));
    const std::size_t max_lead = *std::max_element(leads.begin(), leads.end());

    std::vector<std::size_t> starts;
    for (std::size_t s = m.test.begin; s + c.history - 1 + max_lead < m.test.end; ++s) {
        starts.push_back(s);
    }
    if (starts.empty()) throw InvalidInput("test split too short for the requested lead times");
    if (options.max_windows > 0 && starts.size() > options.max_windows) {
        // Evenly spaced subset, always including the first window.
        std::vector<std::size_t> sub;
        for (std::size_t i = 0; i < options.max_windows; ++i) {
            sub.push_back(starts[i * starts.size() / options.max_windows]);
        }
        starts.swap(sub);
    }

    const LatWeights w = latitude_weights(m.lats);
    const std::vector<double> clim = climatology(data, m.train);
    const std::size_t V = m.n_vars(), N = m.n_lon(), step = m.step_size();

    std::vector<std::string> forecasters{"model"};
    if (options.baselines) {
        forecasters.push_back("persistence");
        forecasters.push_back("climatology");
    }
    // sums[f][lead][v] = {rmse, rmse_literal, acc, acc_count}
    struct Acc {
        double rmse = 0, lit = 0, acc = 0;
        std::size_t n_acc = 0;
    };
    std::vector<std::vector<std::vector<Acc>>> sums(
        forecasters.size(), std::vector<std::vector<Acc>>(leads.size(), std::vector<Acc>(V)));

    auto score = [&](std::size_t f, std::size_t li, std::span<const double> pred,
                     std::span<const double> truth) {
        const auto r = eval_rmse(pred, truth, V, w, N, LossVariant::weatherbench_normalized);
        const auto lit = eval_rmse(pred, truth, V, w, N, LossVariant::alpha_weighted);
        const auto a = eval_acc(pred, truth, clim, V, w, N);
        for (std::size_t v = 0; v < V; ++v) {
            Acc& s = sums[f][li][v];
            s.rmse += r[v];
            s.lit += lit[v];
            if (a[v]) {
                s.acc += *a[v];
                ++s.n_acc;
            }
        }
    };

    for (std::size_t s : starts) {
        std::vector<std::vector<double>> window;
        for (std::size_t t = s; t < s + c.history; ++t) {
            auto x = data.step(t);
            window.emplace_back(x.begin(), x.end());
        }
        const auto last = data.step(s + c.history - 1);
        std::vector<double> next(step);
        for (std::size_t k = 1; k <= max_lead; ++k) {
            std::vector<std::span<const double>> spans(window.begin(), window.end());
            predict_window<float>(spans, model, next);
            const auto truth = data.step(s + c.history - 1 + k);
            for (std::size_t li = 0; li < leads.size(); ++li) {
                if (leads[li] != k) continue;
                score(0, li, next, truth);
                if (options.baselines) {
                    score(1, li, last, truth);
                    score(2, li, clim, truth);
                }
            }
            window.erase(window.begin());
            window.push_back(next);
        }
    }

    EvalReport report;
    report.dataset = m.name;
    report.windows = starts.size();
    const double n = static_cast<double>(starts.size());
    for (std::size_t f = 0; f < forecasters.size(); ++f) {
        for (std::size_t li = 0; li < leads.size(); ++li) {
            for (std::size_t v = 0; v < V; ++v) {
                const Acc& s = sums[f][li][v];
                MetricCell cell;
                cell.forecaster = forecasters[f];
                cell.variable = m.var_names[v];
                cell.lead_steps = leads[li];
                cell.lead_hours = static_cast<double>(leads[li]) * m.timestep_hours;
                cell.rmse = s.rmse / n;
                cell.rmse_literal = s.lit / n;
                if (s.n_acc > 0) cell.acc = s.acc / static_cast<double>(s.n_acc);
                cell.acc_windows = s.n_acc;
                report.cells.push_back(cell);
            }
        }
    }
    return report;
}

}  // namespace climatellm
