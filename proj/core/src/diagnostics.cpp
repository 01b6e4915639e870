#include "mrsae/diagnostics.hpp"
#include "mrsae/csv.hpp"

#include <json.hpp>

#include <map>

namespace mrsae {

double negative_fraction(const Matrix& H) {
    if (H.size() == 0)
        throw ValidationError("negative_fraction: empty matrix");
    return static_cast<double>((H.array() < 0.0).count()) / static_cast<double>(H.size());
}

std::optional<double> radial_eta2(const Matrix& H, std::span<const int> classes) {
    if (static_cast<std::size_t>(H.rows()) != classes.size())
        throw ValidationError("radial_eta2: class labels do not match rows");
    const Vector norms = H.rowwise().norm();
    std::map<int, std::pair<double, std::size_t>> groups;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        auto& g = groups[classes[i]];
        g.first += norms(static_cast<Eigen::Index>(i));
        ++g.second;
    }
    if (groups.size() < 2)
        return std::nullopt;
    const double grand = norms.mean();
    const double total = (norms.array() - grand).square().sum();
    if (!(total > 0.0))
        return std::nullopt;
    double between = 0.0;
    for (const auto& [c, g] : groups) {
        const double m = g.first / static_cast<double>(g.second);
        between += static_cast<double>(g.second) * (m - grand) * (m - grand);
    }
    return std::clamp(between / total, 0.0, 1.0);
}

double effective_dim(const Matrix& H) {
    if (H.rows() < 2)
        throw ValidationError("effective_dim needs at least 2 rows");
    const Matrix centered = H.rowwise() - H.colwise().mean();
    const Eigen::MatrixXd C = centered.transpose() * centered / static_cast<double>(H.rows() - 1);
    const double fro2 = C.squaredNorm();
    if (!(fro2 > 0.0))
        throw ValidationError("effective_dim: zero covariance");
    const double tr = C.trace();
    return tr * tr / fro2;
}

GeometryReport geometry_report(const Matrix& H, std::span<const int> classes) {
    GeometryReport r;
    r.n = static_cast<std::size_t>(H.rows());
    r.d = static_cast<std::size_t>(H.cols());
    r.negative_fraction = negative_fraction(H);
    r.radial_eta2 = radial_eta2(H, classes);
    std::map<int, int> seen;
    for (int c : classes)
        seen[c] = 1;
    r.n_classes = seen.size();
    r.effective_dim = effective_dim(H);
    return r;
}

void write_geometry_json(const GeometryReport& r, const std::filesystem::path& path,
                         const std::string& provenance_json) {
    nlohmann::json doc{{"n", r.n},
                       {"d", r.d},
                       {"negative_fraction", r.negative_fraction},
                       {"radial_eta2", r.radial_eta2 ? nlohmann::json(*r.radial_eta2) : nlohmann::json(nullptr)},
                       {"radial_eta2_defined", r.radial_eta2.has_value()},
                       {"n_classes", r.n_classes},
                       {"effective_dim", r.effective_dim}};
    if (!provenance_json.empty())
        doc["provenance"] = nlohmann::json::parse(provenance_json);
    auto out = csv::open_output(path);
    out << doc.dump(2) << '\n';
}

} // namespace mrsae
