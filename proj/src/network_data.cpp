#include "nmaipw/network_data.hpp"

#include "nmaipw/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

namespace nmaipw {

Direction direction_from_string(const std::string& s) {
    if (s == "higher") return Direction::Higher;
    if (s == "lower") return Direction::Lower;
    throw ValidationError("unknown direction '" + s + "' (expected higher|lower)");
}

std::string to_string(Direction d) {
    return d == Direction::Higher ? "higher" : "lower";
}

int NetworkDataset::published_count() const {
    int n = 0;
    for (const auto& s : studies) n += s.published ? 1 : 0;
    return n;
}

int NetworkDataset::unpublished_count() const {
    return total_count() - published_count();
}

const DesignType& NetworkDataset::design_of(const StudyRecord& study) const {
    const int ord = study.design_k - 1;
    if (ord < 0 || ord >= design_count()) {
        throw ValidationError("study '" + study.study_id + "' references unknown design " +
                              std::to_string(study.design_k));
    }
    return designs[static_cast<std::size_t>(ord)];
}

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

namespace {

const char* const kHeader =
    "study_id,design_k,treat_x,treat_y,y,se,shared_arm_var,n,published";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& field, int line_no, const char* what) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + what +
                         " from '" + field + "'");
    }
    return v;
}

long parse_long(const std::string& field, int line_no, const char* what) {
    long v = 0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + what +
                         " from '" + field + "'");
    }
    return v;
}

struct RawRow {
    int line_no = 0;
    std::string study_id;
    int design_k = 0;
    TreatmentId treat_x;
    TreatmentId treat_y;
    std::optional<double> y;
    std::optional<double> se;
    std::optional<double> shared_arm_var;
    long n = 0;
    bool published = false;
};

RawRow parse_row(const std::string& line, int line_no) {
    const auto fields = split_csv_line(line);
    if (fields.size() != 9) {
        throw ParseError("line " + std::to_string(line_no) + ": expected 9 fields, found " +
                         std::to_string(fields.size()));
    }
    RawRow r;
    r.line_no = line_no;
    r.study_id = trim(fields[0]);
    r.design_k = static_cast<int>(parse_long(trim(fields[1]), line_no, "design_k"));
    r.treat_x = trim(fields[2]);
    r.treat_y = trim(fields[3]);
    const std::string y_s = trim(fields[4]);
    const std::string se_s = trim(fields[5]);
    const std::string sav_s = trim(fields[6]);
    if (!y_s.empty()) r.y = parse_double(y_s, line_no, "y");
    if (!se_s.empty()) r.se = parse_double(se_s, line_no, "se");
    if (!sav_s.empty()) r.shared_arm_var = parse_double(sav_s, line_no, "shared_arm_var");
    r.n = parse_long(trim(fields[7]), line_no, "n");
    const std::string pub_s = trim(fields[8]);
    if (pub_s == "1") {
        r.published = true;
    } else if (pub_s == "0") {
        r.published = false;
    } else {
        throw ParseError("line " + std::to_string(line_no) + ": published must be 0 or 1, got '" +
                         pub_s + "'");
    }
    if (r.study_id.empty()) {
        throw ValidationError("line " + std::to_string(line_no) + ": empty study_id");
    }
    if (r.treat_x.empty() || r.treat_y.empty()) {
        throw ValidationError("line " + std::to_string(line_no) + ": empty treatment label in study '" +
                              r.study_id + "'");
    }
    if (r.treat_x == r.treat_y) {
        throw ValidationError("line " + std::to_string(line_no) + ": self-comparison '" + r.treat_x +
                              "' in study '" + r.study_id + "'");
    }
    return r;
}

}  // namespace

NetworkDataset read_dataset_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw SchemaError("empty input: missing header row");
    }
    {
        std::string header = line;
        header.erase(std::remove(header.begin(), header.end(), '\r'), header.end());
        header.erase(std::remove(header.begin(), header.end(), ' '), header.end());
        if (header != kHeader) {
            throw SchemaError("header does not match studies-long-v1 schema: got '" + line + "'");
        }
    }

    std::vector<RawRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        rows.push_back(parse_row(line, line_no));
    }
    if (rows.empty()) {
        throw ValidationError("dataset contains no study rows");
    }

    NetworkDataset data;

    // Group rows by study, preserving file order.
    std::vector<std::vector<const RawRow*>> groups;
    std::map<std::string, std::size_t> group_of;
    for (const auto& r : rows) {
        auto it = group_of.find(r.study_id);
        if (it == group_of.end()) {
            group_of.emplace(r.study_id, groups.size());
            groups.push_back({&r});
        } else {
            groups[it->second].push_back(&r);
        }
    }

    // Designs declare themselves through their first study; later studies
    // must reference the identical comparison list.
    std::map<int, std::vector<std::pair<TreatmentId, TreatmentId>>> design_comparisons;

    for (const auto& group : groups) {
        const RawRow& first = *group.front();
        StudyRecord study;
        study.study_id = first.study_id;
        study.design_k = first.design_k;
        study.published = first.published;

        std::vector<std::pair<TreatmentId, TreatmentId>> pairs;
        for (const RawRow* r : group) {
            if (r->design_k != study.design_k) {
                throw ValidationError("study '" + study.study_id +
                                      "' spans multiple design_k values");
            }
            if (r->published != study.published) {
                throw ValidationError("study '" + study.study_id +
                                      "' mixes published and unpublished rows");
            }
            const auto pair = std::make_pair(r->treat_x, r->treat_y);
            if (std::find(pairs.begin(), pairs.end(), pair) != pairs.end()) {
                throw ValidationError("duplicate (study, comparison) row: study '" +
                                      study.study_id + "', " + r->treat_x + " vs " + r->treat_y);
            }
            pairs.push_back(pair);
        }

        auto decl = design_comparisons.find(study.design_k);
        if (decl == design_comparisons.end()) {
            design_comparisons.emplace(study.design_k, pairs);
        } else if (decl->second != pairs) {
            throw ValidationError("study '" + study.study_id + "' references design " +
                                  std::to_string(study.design_k) +
                                  " with comparisons that do not match its declaration");
        }

        long registry_n = -1;
        for (const RawRow* r : group) {
            if (r->n < 2) {
                throw ValidationError("study '" + study.study_id +
                                      "': n must be at least 2 per comparison");
            }
            if (study.published) {
                if (!r->y || !r->se) {
                    throw ValidationError("published study '" + study.study_id +
                                          "' is missing y or se");
                }
                if (*r->se <= 0.0) {
                    throw ValidationError("published study '" + study.study_id +
                                          "': se must be > 0");
                }
                ComparisonOutcome oc;
                oc.treat_x = r->treat_x;
                oc.treat_y = r->treat_y;
                oc.y = *r->y;
                oc.se = *r->se;
                oc.n = r->n;
                study.outcomes.push_back(oc);
            } else {
                if (r->y || r->se) {
                    throw ValidationError("unpublished study '" + study.study_id +
                                          "' carries outcome values");
                }
                if (r->shared_arm_var) {
                    throw ValidationError("unpublished study '" + study.study_id +
                                          "' carries a shared-arm variance");
                }
                if (registry_n >= 0 && registry_n != r->n) {
                    throw ValidationError("registry record '" + study.study_id +
                                          "': planned sample size must be identical "
                                          "across comparisons");
                }
                registry_n = r->n;
            }
            if (pairs.size() > 1 && study.published) {
                if (!r->shared_arm_var) {
                    throw MissingCovariance("multi-arm published study '" + study.study_id +
                                            "' is missing shared_arm_var");
                }
                if (study.shared_arm_variance &&
                    *study.shared_arm_variance != *r->shared_arm_var) {
                    throw ValidationError("study '" + study.study_id +
                                          "': shared_arm_var differs between rows");
                }
                study.shared_arm_variance = r->shared_arm_var;
            } else if (study.published && r->shared_arm_var) {
                throw ValidationError("two-arm study '" + study.study_id +
                                      "' carries a shared_arm_var");
            }
        }
        study.n_planned = study.published ? group.front()->n : registry_n;

        for (const auto& [x, yid] : pairs) {
            if (std::find(data.treatments.begin(), data.treatments.end(), x) ==
                data.treatments.end()) {
                data.treatments.push_back(x);
            }
            if (std::find(data.treatments.begin(), data.treatments.end(), yid) ==
                data.treatments.end()) {
                data.treatments.push_back(yid);
            }
        }
        data.studies.push_back(std::move(study));
    }

    for (const auto& [k, pairs] : design_comparisons) {
        DesignType design;
        design.index = k;
        design.comparisons = pairs;
        const TreatmentId& comparator = pairs.front().second;
        for (const auto& [x, yid] : pairs) {
            if (yid != comparator) {
                throw ValidationError("design " + std::to_string(k) +
                                      ": comparisons do not share a single comparator arm");
            }
            design.treatments.push_back(x);
        }
        design.treatments.push_back(comparator);
        data.designs.push_back(std::move(design));
    }

    validate_dataset(data);
    return data;
}

NetworkDataset load_dataset(const std::filesystem::path& path, const std::string& schema) {
    if (schema != "studies-long-v1") {
        throw SchemaError("unknown schema id '" + schema + "'");
    }
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open file: " + path.string());
    }
    return read_dataset_csv(in);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; ++i) parent[i] = i;
    }
    int find(int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

void validate_dataset(const NetworkDataset& data) {
    // Design indices must be 1..K.
    for (int i = 0; i < data.design_count(); ++i) {
        if (data.designs[static_cast<std::size_t>(i)].index != i + 1) {
            throw ValidationError("design indices must be contiguous 1..K; missing design " +
                                  std::to_string(i + 1));
        }
    }

    std::set<std::string> ids;
    for (const auto& study : data.studies) {
        if (!ids.insert(study.study_id).second) {
            throw ValidationError("duplicate study_id '" + study.study_id + "'");
        }
        const DesignType& design = data.design_of(study);
        if (study.published) {
            if (study.outcomes.empty()) {
                throw ValidationError("published study '" + study.study_id + "' has no outcomes");
            }
            if (study.outcomes.size() != design.comparisons.size()) {
                throw ValidationError("published study '" + study.study_id + "' reports " +
                                      std::to_string(study.outcomes.size()) + " comparisons but design " +
                                      std::to_string(design.index) + " declares " +
                                      std::to_string(design.comparisons.size()));
            }
            for (std::size_t j = 0; j < study.outcomes.size(); ++j) {
                const auto& oc = study.outcomes[j];
                if (oc.treat_x != design.comparisons[j].first ||
                    oc.treat_y != design.comparisons[j].second) {
                    throw ValidationError("study '" + study.study_id +
                                          "': comparison order does not match design " +
                                          std::to_string(design.index));
                }
                if (oc.se <= 0.0) {
                    throw ValidationError("study '" + study.study_id + "': se must be > 0");
                }
                if (oc.n < 2) {
                    throw ValidationError("study '" + study.study_id + "': n must be >= 2");
                }
            }
            if (design.multi_arm() && !study.shared_arm_variance) {
                throw MissingCovariance("multi-arm published study '" + study.study_id +
                                        "' is missing its shared-arm variance");
            }
            // Surfaces NotPositiveDefinite for inadmissible covariances.
            try {
                assemble_covariance(study, design);
            } catch (const NotPositiveDefinite& e) {
                throw ValidationError(std::string(e.what()));
            }
        } else {
            if (!study.outcomes.empty()) {
                throw ValidationError("unpublished study '" + study.study_id + "' carries outcomes");
            }
            if (study.n_planned < 2) {
                throw ValidationError("registry record '" + study.study_id +
                                      "': planned sample size must be >= 2");
            }
        }
    }

    // Connectivity across the treatments that appear in published studies.
    std::map<TreatmentId, int> tid;
    for (std::size_t i = 0; i < data.treatments.size(); ++i) {
        tid[data.treatments[i]] = static_cast<int>(i);
    }
    UnionFind uf(static_cast<int>(data.treatments.size()));
    std::set<int> published_nodes;
    for (const auto& study : data.studies) {
        if (!study.published) continue;
        for (const auto& oc : study.outcomes) {
            const int a = tid.at(oc.treat_x);
            const int b = tid.at(oc.treat_y);
            published_nodes.insert(a);
            published_nodes.insert(b);
            uf.unite(a, b);
        }
    }
    if (published_nodes.empty()) {
        throw ValidationError("dataset has no published studies");
    }
    const int root = uf.find(*published_nodes.begin());
    for (int node : published_nodes) {
        if (uf.find(node) != root) {
            throw ValidationError("network of published studies is disconnected at treatment '" +
                                  data.treatments[static_cast<std::size_t>(node)] + "'");
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization back to CSV (bit-exact round trip)
// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

void write_dataset_csv(const NetworkDataset& data, std::ostream& out) {
    out << kHeader << '\n';
    for (const auto& study : data.studies) {
        const DesignType& design = data.design_of(study);
        if (study.published) {
            for (const auto& oc : study.outcomes) {
                out << study.study_id << ',' << design.index << ',' << oc.treat_x << ','
                    << oc.treat_y << ',' << format_double(oc.y) << ',' << format_double(oc.se)
                    << ',';
                if (study.shared_arm_variance) out << format_double(*study.shared_arm_variance);
                out << ',' << oc.n << ",1\n";
            }
        } else {
            for (const auto& [x, y] : design.comparisons) {
                out << study.study_id << ',' << design.index << ',' << x << ',' << y << ",,,,"
                    << study.n_planned << ",0\n";
            }
        }
    }
}

void save_dataset(const NetworkDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError("cannot open file for writing: " + path.string());
    }
    write_dataset_csv(data, out);
}

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

Eigen::MatrixXd assemble_covariance(const StudyRecord& study, const DesignType& design) {
    if (!study.published) {
        throw Unpublished("study '" + study.study_id + "' is unpublished; no covariance");
    }
    const int d = design.comparison_count();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    double min_var = std::numeric_limits<double>::infinity();
    for (int i = 0; i < d; ++i) {
        const double v = study.outcomes[static_cast<std::size_t>(i)].se *
                         study.outcomes[static_cast<std::size_t>(i)].se;
        cov(i, i) = v;
        min_var = std::min(min_var, v);
    }
    if (d > 1) {
        if (!study.shared_arm_variance) {
            throw MissingCovariance("multi-arm study '" + study.study_id +
                                    "' is missing its shared-arm variance");
        }
        const double c = *study.shared_arm_variance;
        if (c < 0.0) {
            throw ValidationError("study '" + study.study_id + "': shared-arm variance is negative");
        }
        if (c >= min_var) {
            throw NotPositiveDefinite("study '" + study.study_id +
                                      "': shared-arm variance is not below every comparison variance");
        }
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                if (i != j) cov(i, j) = c;
            }
        }
    }
    return cov;
}

Eigen::MatrixXd assemble_covariance(const NetworkDataset& data, const StudyRecord& study) {
    return assemble_covariance(study, data.design_of(study));
}

double study_t_statistic(const StudyRecord& study, Direction direction) {
    if (!study.published || study.outcomes.empty()) {
        throw Unpublished("study '" + study.study_id + "' has no outcomes for a t-statistic");
    }
    double best = study.outcomes.front().y / study.outcomes.front().se;
    for (std::size_t i = 1; i < study.outcomes.size(); ++i) {
        const double t = study.outcomes[i].y / study.outcomes[i].se;
        best = direction == Direction::Higher ? std::max(best, t) : std::min(best, t);
    }
    return best;
}

}  // namespace nmaipw
