#include "agcdro/qcqp.hpp"

#include "agcdro/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace agcdro {

using nlohmann::json;

namespace {

// Infinite bounds travel as the strings "inf" / "-inf".
json bound_array(const Vector& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isinf(v(i))) {
            a.push_back(v(i) > 0 ? "inf" : "-inf");
        } else {
            a.push_back(v(i));
        }
    }
    return a;
}

Vector read_bounds(const json& a, Eigen::Index n, const char* what)
{
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != n) {
        throw InputError(std::string("qcqp file: '") + what + "' must be an array of length n");
    }
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& e = a[static_cast<std::size_t>(i)];
        if (e.is_string()) {
            const auto s = e.get<std::string>();
            if (s == "inf") {
                v(i) = kInf;
            } else if (s == "-inf") {
                v(i) = -kInf;
            } else {
                throw InputError(std::string("qcqp file: bad bound '") + s + "' in " + what);
            }
        } else {
            v(i) = e.get<double>();
        }
    }
    return v;
}

json vec(const Vector& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vector read_vec(const json& a, Eigen::Index n, const char* what)
{
    const auto v = a.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != n) {
        throw InputError(std::string("qcqp file: '") + what + "' has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(n));
    }
    return Eigen::Map<const Vector>(v.data(), n);
}

json sparse(const SparseMatrix& M)
{
    std::vector<Eigen::Index> r, c;
    std::vector<double> v;
    for (Eigen::Index k = 0; k < M.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(M, k); it; ++it) {
            r.push_back(it.row());
            c.push_back(it.col());
            v.push_back(it.value());
        }
    }
    return {{"rows", M.rows()}, {"cols", M.cols()}, {"i", r}, {"j", c}, {"v", v}};
}

SparseMatrix read_sparse(const json& j, const char* what)
{
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto r = j.at("i").get<std::vector<Eigen::Index>>();
    const auto c = j.at("j").get<std::vector<Eigen::Index>>();
    const auto v = j.at("v").get<std::vector<double>>();
    if (r.size() != c.size() || r.size() != v.size()) {
        throw InputError(std::string("qcqp file: triplet arrays of '") + what + "' differ in length");
    }
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (r[k] < 0 || r[k] >= rows || c[k] < 0 || c[k] >= cols) {
            throw InputError(std::string("qcqp file: entry out of range in '") + what + "'");
        }
        t.emplace_back(r[k], c[k], v[k]);
    }
    SparseMatrix M(rows, cols);
    M.setFromTriplets(t.begin(), t.end());
    return M;
}

} // namespace

std::string to_json(const QcqpProblem& p)
{
    json j;
    j["format"] = "agcdro-qcqp";
    j["version"] = 1;
    j["n"] = p.n;
    json blocks = json::array();
    for (const auto& b : p.blocks) {
        blocks.push_back({{"name", b.name}, {"start", b.start}, {"size", b.size}});
    }
    j["blocks"] = blocks;
    j["lb"] = bound_array(p.lb);
    j["ub"] = bound_array(p.ub);
    j["objective"] = {{"P", sparse(p.P)}, {"c", vec(p.c)}, {"c0", p.c0}};
    j["equalities"] = {{"A", sparse(p.A_eq)}, {"b", vec(p.b_eq)}};
    j["inequalities"] = {{"G", sparse(p.G_in)}, {"h", vec(p.h_in)}};
    json quad = json::array();
    for (const auto& q : p.quad) {
        quad.push_back({{"name", q.name}, {"Q", sparse(q.Q)}, {"a", vec(q.a)}, {"b", q.b}});
    }
    j["quadratic"] = quad;
    return j.dump(1);
}

QcqpProblem qcqp_from_json(const std::string& text)
{
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "agcdro-qcqp" || j.at("version").get<int>() != 1) {
            throw InputError("qcqp file: unsupported format or version");
        }
        QcqpProblem p;
        p.n = j.at("n").get<Eigen::Index>();
        for (const auto& b : j.at("blocks")) {
            p.blocks.push_back({b.at("name").get<std::string>(), b.at("start").get<Eigen::Index>(),
                                b.at("size").get<Eigen::Index>()});
        }
        p.lb = read_bounds(j.at("lb"), p.n, "lb");
        p.ub = read_bounds(j.at("ub"), p.n, "ub");
        const auto& o = j.at("objective");
        p.P = read_sparse(o.at("P"), "P");
        p.c = read_vec(o.at("c"), p.n, "c");
        p.c0 = o.at("c0").get<double>();
        const auto& e = j.at("equalities");
        p.A_eq = read_sparse(e.at("A"), "A");
        p.b_eq = read_vec(e.at("b"), p.A_eq.rows(), "b");
        const auto& in = j.at("inequalities");
        p.G_in = read_sparse(in.at("G"), "G");
        p.h_in = read_vec(in.at("h"), p.G_in.rows(), "h");
        for (const auto& q : j.at("quadratic")) {
            p.quad.push_back({q.at("name").get<std::string>(), read_sparse(q.at("Q"), "Q"),
                              read_vec(q.at("a"), p.n, "a"), q.at("b").get<double>()});
        }
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw InputError(std::string("qcqp file: ") + e.what());
    }
}

void save_qcqp(const std::filesystem::path& path, const QcqpProblem& p)
{
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
    out << to_json(p) << '\n';
}

QcqpProblem load_qcqp(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return qcqp_from_json(ss.str());
}

} // namespace agcdro
