#include "holotea/stack.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace holotea {

namespace fs = std::filesystem;
using nlohmann::json;

BoundingBox SlideStack::frame() const {
    BoundingBox box;
    box.a_min = box.b_min = std::numeric_limits<double>::infinity();
    box.a_max = box.b_max = -std::numeric_limits<double>::infinity();
    for (const Section& sec : sections) {
        for (const Spot& s : sec.spots) {
            box.a_min = std::min(box.a_min, s.a);
            box.a_max = std::max(box.a_max, s.a);
            box.b_min = std::min(box.b_min, s.b);
            box.b_max = std::max(box.b_max, s.b);
        }
    }
    return box;
}

void SlideStack::validate() const {
    for (std::int64_t z = 1; z <= depth(); ++z) {
        const Section& sec = sections[z - 1];
        if (sec.z != z) throw std::invalid_argument("SlideStack: z indices not contiguous");
        for (const Spot& s : sec.spots) {
            if (s.section != z) throw std::invalid_argument("SlideStack: spot/section z mismatch");
            if (static_cast<std::int64_t>(s.embedding.size()) != embedding_dim)
                throw std::invalid_argument("SlideStack: embedding length != D");
            if (s.labeled() && static_cast<std::int64_t>(s.expression.size()) != gene_count)
                throw std::invalid_argument("SlideStack: expression length != G");
            for (double e : s.expression)
                if (e < 0.0) throw std::invalid_argument("SlideStack: negative expression entry");
        }
    }
}

NeighborGraph build_knn_graph(const Section& section, std::int64_t k) {
    const std::int64_t n = static_cast<std::int64_t>(section.spots.size());
    if (n == 0) throw EmptyInputError("build_knn_graph: empty section");
    if (k < 1) throw std::invalid_argument("build_knn_graph: k must be >= 1");
    NeighborGraph g;
    g.neighbors.resize(n);
    g.distances.resize(n);
    std::map<std::int64_t, std::int64_t> index_of_id;
    for (std::int64_t j = 0; j < n; ++j) index_of_id[section.spots[j].id] = j;
    std::vector<std::pair<double, std::int64_t>> cand;
    for (std::int64_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double da = section.spots[i].a - section.spots[j].a;
            const double db = section.spots[i].b - section.spots[j].b;
            cand.emplace_back(std::sqrt(da * da + db * db), section.spots[j].id);
        }
        const std::int64_t take = std::min<std::int64_t>(k, n - 1);
        std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
        g.neighbors[i].reserve(take);
        g.distances[i].reserve(take);
        for (std::int64_t e = 0; e < take; ++e) {
            g.neighbors[i].push_back(index_of_id.at(cand[e].second));
            g.distances[i].push_back(cand[e].first);
        }
    }
    return g;
}

AdjacentCandidates adjacent_candidates(const SlideStack& stack, const Spot& spot,
                                       std::int64_t k_prime, CandidateSource source) {
    if (k_prime < 1) throw std::invalid_argument("adjacent_candidates: k' must be >= 1");
    AdjacentCandidates out;
    std::vector<std::tuple<double, std::int64_t, std::int64_t, std::int64_t>> cand;  // d, id, z, idx
    for (std::int64_t dz : {-1, +1}) {
        const std::int64_t z = spot.section + dz;
        if (z < 1 || z > stack.depth()) continue;
        const Section& sec = stack.section(z);
        for (std::int64_t j = 0; j < static_cast<std::int64_t>(sec.spots.size()); ++j) {
            const Spot& s = sec.spots[j];
            if (source == CandidateSource::LabeledExpression && !s.labeled()) continue;
            const double da = spot.a - s.a;
            const double db = spot.b - s.b;
            cand.emplace_back(std::sqrt(da * da + db * db), s.id, z, j);
        }
    }
    if (cand.empty()) return out;  // available stays false
    const std::int64_t take = std::min<std::int64_t>(k_prime, static_cast<std::int64_t>(cand.size()));
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    for (std::int64_t e = 0; e < take; ++e) {
        out.candidates.emplace_back(std::get<2>(cand[e]), std::get<3>(cand[e]));
        out.distances.push_back(std::get<0>(cand[e]));
    }
    out.available = true;
    return out;
}

std::vector<double> positional_features(const Spot& spot, const BoundingBox& frame,
                                        std::int64_t dim, std::int64_t* clamped) {
    if (dim % 4 != 0 || dim <= 0)
        throw std::invalid_argument("positional_features: dim must be a positive multiple of 4");
    auto norm = [clamped](double v, double lo, double hi) {
        double span = hi - lo;
        double u = span > 0 ? (v - lo) / span : 0.0;
        if (u < 0.0 || u > 1.0) {
            if (clamped) ++*clamped;
            u = std::clamp(u, 0.0, 1.0);
        }
        return u;
    };
    const double u = norm(spot.a, frame.a_min, frame.a_max);
    const double v = norm(spot.b, frame.b_min, frame.b_max);
    const std::int64_t freqs = dim / 4;
    std::vector<double> out;
    out.reserve(dim);
    for (std::int64_t f = 0; f < freqs; ++f) {
        const double w = std::pow(2.0, static_cast<double>(f)) * std::numbers::pi;
        out.push_back(std::sin(w * u));
        out.push_back(std::cos(w * u));
        out.push_back(std::sin(w * v));
        out.push_back(std::cos(w * v));
    }
    return out;
}

Tensor2 expression_matrix(const Section& section, std::int64_t gene_count) {
    const std::int64_t n = static_cast<std::int64_t>(section.spots.size());
    Tensor2 out(n, gene_count);
    for (std::int64_t i = 0; i < n; ++i) {
        const Spot& s = section.spots[i];
        check_shape(static_cast<std::int64_t>(s.expression.size()) == gene_count,
                    "expression_matrix: unlabeled spot or gene count mismatch");
        for (std::int64_t g = 0; g < gene_count; ++g) out.at(i, g) = s.expression[g];
    }
    return out;
}

void save_matrix(const std::string& path, const Tensor2& m) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_matrix: cannot open " + path);
    const std::uint32_t r = static_cast<std::uint32_t>(m.rows);
    const std::uint32_t c = static_cast<std::uint32_t>(m.cols);
    os.write(reinterpret_cast<const char*>(&r), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(m.data.data()),
             static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!os) throw std::runtime_error("save_matrix: write failed for " + path);
}

Tensor2 load_matrix(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_matrix: cannot open " + path);
    std::uint32_t r = 0, c = 0;
    is.read(reinterpret_cast<char*>(&r), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    Tensor2 m(r, c);
    is.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("load_matrix: truncated file " + path);
    return m;
}

void save_stack(const std::string& dir, const SlideStack& stack,
                const std::vector<std::vector<std::int64_t>>* region_labels) {
    fs::create_directories(dir);
    json meta;
    meta["Z"] = stack.depth();
    meta["G"] = stack.gene_count;
    meta["D"] = stack.embedding_dim;
    meta["gene_names"] = stack.gene_names;
    meta["units"] = stack.coordinate_units;
    std::vector<std::int64_t> per_section;
    for (const Section& s : stack.sections) per_section.push_back(static_cast<std::int64_t>(s.spots.size()));
    meta["spots_per_section"] = per_section;
    std::ofstream(dir + "/stack.json") << meta.dump(2) << "\n";

    for (const Section& sec : stack.sections) {
        const std::string suffix = "_z" + std::to_string(sec.z);
        const std::int64_t n = static_cast<std::int64_t>(sec.spots.size());
        {
            std::ofstream os(dir + "/spots" + suffix + ".csv");
            os << "id,a,b\n";
            os.precision(17);
            for (const Spot& s : sec.spots) os << s.id << "," << s.a << "," << s.b << "\n";
        }
        Tensor2 emb(n, stack.embedding_dim);
        for (std::int64_t i = 0; i < n; ++i)
            std::copy(sec.spots[i].embedding.begin(), sec.spots[i].embedding.end(),
                      emb.data.begin() + i * stack.embedding_dim);
        save_matrix(dir + "/emb" + suffix + ".bin", emb);
        if (sec.labeled()) {
            Tensor2 expr(n, stack.gene_count);
            Tensor2 counts(n, stack.gene_count);
            for (std::int64_t i = 0; i < n; ++i) {
                std::copy(sec.spots[i].expression.begin(), sec.spots[i].expression.end(),
                          expr.data.begin() + i * stack.gene_count);
                if (!sec.spots[i].counts.empty())
                    std::copy(sec.spots[i].counts.begin(), sec.spots[i].counts.end(),
                              counts.data.begin() + i * stack.gene_count);
            }
            save_matrix(dir + "/expr" + suffix + ".bin", expr);
            save_matrix(dir + "/counts" + suffix + ".bin", counts);
        }
        if (region_labels) {
            std::ofstream os(dir + "/labels" + suffix + ".csv");
            os << "id,region\n";
            const auto& labels = (*region_labels)[sec.z - 1];
            for (std::int64_t i = 0; i < n; ++i)
                os << sec.spots[i].id << "," << labels[i] << "\n";
        }
    }
}

SlideStack load_stack(const std::string& dir) {
    std::ifstream meta_in(dir + "/stack.json");
    if (!meta_in) throw std::runtime_error("load_stack: missing " + dir + "/stack.json");
    json meta = json::parse(meta_in);
    SlideStack stack;
    stack.gene_count = meta.at("G").get<std::int64_t>();
    stack.embedding_dim = meta.at("D").get<std::int64_t>();
    stack.gene_names = meta.at("gene_names").get<std::vector<std::string>>();
    if (meta.contains("units")) stack.coordinate_units = meta["units"].get<std::string>();
    const std::int64_t Z = meta.at("Z").get<std::int64_t>();

    for (std::int64_t z = 1; z <= Z; ++z) {
        const std::string suffix = "_z" + std::to_string(z);
        Section sec;
        sec.z = z;
        std::ifstream csv(dir + "/spots" + suffix + ".csv");
        if (!csv) throw std::runtime_error("load_stack: missing spots" + suffix + ".csv");
        std::string line;
        std::getline(csv, line);  // header
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string tok;
            Spot s;
            std::getline(ls, tok, ',');
            s.id = std::stoll(tok);
            std::getline(ls, tok, ',');
            s.a = std::stod(tok);
            std::getline(ls, tok, ',');
            s.b = std::stod(tok);
            s.section = z;
            sec.spots.push_back(std::move(s));
        }
        const std::int64_t n = static_cast<std::int64_t>(sec.spots.size());
        Tensor2 emb = load_matrix(dir + "/emb" + suffix + ".bin");
        check_shape(emb.rows == n && emb.cols == stack.embedding_dim, "load_stack: emb shape");
        for (std::int64_t i = 0; i < n; ++i)
            sec.spots[i].embedding.assign(emb.data.begin() + i * emb.cols,
                                           emb.data.begin() + (i + 1) * emb.cols);
        const std::string expr_path = dir + "/expr" + suffix + ".bin";
        if (fs::exists(expr_path)) {
            Tensor2 expr = load_matrix(expr_path);
            check_shape(expr.rows == n && expr.cols == stack.gene_count, "load_stack: expr shape");
            for (std::int64_t i = 0; i < n; ++i)
                sec.spots[i].expression.assign(expr.data.begin() + i * expr.cols,
                                                expr.data.begin() + (i + 1) * expr.cols);
            const std::string counts_path = dir + "/counts" + suffix + ".bin";
            if (fs::exists(counts_path)) {
                Tensor2 counts = load_matrix(counts_path);
                for (std::int64_t i = 0; i < n; ++i)
                    sec.spots[i].counts.assign(counts.data.begin() + i * counts.cols,
                                                counts.data.begin() + (i + 1) * counts.cols);
            }
        }
        stack.sections.push_back(std::move(sec));
    }
    stack.validate();
    return stack;
}

std::vector<std::vector<std::int64_t>> load_region_labels(const std::string& dir,
                                                          const SlideStack& stack) {
    std::vector<std::vector<std::int64_t>> labels;
    for (const Section& sec : stack.sections) {
        std::ifstream csv(dir + "/labels_z" + std::to_string(sec.z) + ".csv");
        if (!csv) throw std::runtime_error("load_region_labels: missing labels for z=" +
                                           std::to_string(sec.z));
        std::string line;
        std::getline(csv, line);
        std::vector<std::int64_t> ls;
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            ls.push_back(std::stoll(line.substr(comma + 1)));
        }
        labels.push_back(std::move(ls));
    }
    return labels;
}

}  // namespace holotea
