#include "auditkit/report.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "auditkit/errors.hpp"
#include "auditkit/stats.hpp"

namespace audit {

namespace {

constexpr std::uint64_t kFnvBasis = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

struct Fnv64 {
    std::uint64_t h = kFnvBasis;

    void add(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= kFnvPrime;
        }
    }
    void add(const std::string& s) { add(s.data(), s.size()); }
    // Floats enter the hash as the hex of their bit pattern, so the digest
    // does not depend on how the platform prints them.
    void add_f32(float v) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%08x",
                      static_cast<unsigned>(std::bit_cast<std::uint32_t>(v)));
        add(buf, 8);
    }
};

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string pct1(double fraction) { return fmt("%.1f", fraction * 100.0); }
std::string pct0(double fraction) { return fmt("%.0f", fraction * 100.0); }
std::string eps3(double epsilon) { return fmt("%.3f", epsilon); }

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw io_error("short write to '" + path + "'");
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void ensure_directory(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + dir + "': " + ec.message());
}

// Lowercased model name with every non-alphanumeric run collapsed to a
// single dash, for use in filenames.
std::string slug(const std::string& name) {
    std::string out;
    bool pending_dash = false;
    for (const char c : name) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            if (pending_dash && !out.empty()) out.push_back('-');
            pending_dash = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        } else {
            pending_dash = true;
        }
    }
    return out.empty() ? "model" : out;
}

std::string join_ints(const std::vector<int>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(values[i]);
    }
    return out;
}

// Two-space separated columns with a dash rule under the header.
std::string render_table(const std::vector<std::string>& headers,
                         const std::vector<std::vector<std::string>>& rows,
                         const std::vector<bool>& right_align) {
    const std::size_t n = headers.size();
    std::vector<std::size_t> width(n);
    for (std::size_t i = 0; i < n; ++i) width[i] = headers[i].size();
    for (const auto& row : rows)
        for (std::size_t i = 0; i < n; ++i) width[i] = std::max(width[i], row[i].size());

    std::ostringstream out;
    auto emit_row = [&](const std::vector<std::string>& cells, bool align) {
        std::string line;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) line += "  ";
            const std::string& cell = cells[i];
            const std::string pad(width[i] - cell.size(), ' ');
            if (align && right_align[i])
                line += pad + cell;
            else
                line += cell + pad;
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << '\n';
    };
    emit_row(headers, false);
    std::vector<std::string> rule(n);
    for (std::size_t i = 0; i < n; ++i) rule[i] = std::string(width[i], '-');
    emit_row(rule, false);
    for (const auto& row : rows) emit_row(row, true);
    return out.str();
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    Fnv64 f;
    f.add(data, len);
    return f.h;
}

std::uint64_t fnv1a64(const std::string& bytes) { return fnv1a64(bytes.data(), bytes.size()); }

std::string hex64(std::uint64_t value) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

ModelFingerprint fingerprint_model(const MicroDenseNet& model, std::uint64_t seed) {
    model.cfg.check_invariants();
    const MicroDenseNetConfig& c = model.cfg;
    std::string arch = "micro-densenet " + std::to_string(c.in_channels) + "x" +
                       std::to_string(c.image_size) + "x" + std::to_string(c.image_size) +
                       " stem" + std::to_string(c.stem_channels) + " blocks" +
                       std::to_string(c.blocks) + "x" + std::to_string(c.layers_per_block) +
                       " growth" + std::to_string(c.growth) + " classes" +
                       std::to_string(c.num_classes);

    Fnv64 f;
    f.add("cfg|" + std::to_string(c.in_channels) + "," + std::to_string(c.image_size) + "," +
          std::to_string(c.num_classes) + "," + std::to_string(c.stem_channels) + "," +
          std::to_string(c.blocks) + "," + std::to_string(c.layers_per_block) + "," +
          std::to_string(c.growth));
    f.add("|stats|");
    for (const float v : model.stats.mean) f.add_f32(v);
    for (const float v : model.stats.stddev) f.add_f32(v);
    f.add("|labels|");
    for (const ClassLabel& label : model.labels)
        f.add(std::to_string(label.index) + ":" + label.name + ";");
    f.add("|params|");
    for (const Tensor& p : model.params) {
        f.add(shape_str(p.shape) + "|");
        for (const float v : p.data) f.add_f32(v);
    }
    return ModelFingerprint{std::move(arch), seed, hex64(f.h)};
}

std::string corpus_hash(const CorpusManifest& corpus) {
    corpus.check_invariants();
    Fnv64 f;
    f.add("labels|");
    for (const ClassLabel& label : corpus.labels)
        f.add(std::to_string(label.index) + ":" + label.name + ";");
    for (const Vignette& v : corpus.cases) {
        f.add(std::to_string(v.case_id));
        f.add("\x1f");
        f.add(register_key(v.reg));
        f.add("\x1f");
        f.add(v.text);
        f.add("\x1f");
        f.add(v.truth.name);
        f.add("\n");
    }
    return hex64(f.h);
}

std::optional<double> danger_zone_threshold(const SweepResult& sweep) {
    for (const SweepRow& row : sweep.rows)
        if (row.accuracy < 0.5) return row.epsilon;
    return std::nullopt;
}

void RobustnessMap::check_invariants() const {
    if (sweep.rows.empty()) throw validation_error("robustness map has no sweep rows");
    const int k = sweep.rows.front().confusion.k;
    if (static_cast<int>(class_names.size()) != k)
        throw validation_error("robustness map names " + std::to_string(class_names.size()) +
                               " classes but the confusion matrices have " + std::to_string(k));
    double prev_epsilon = -1.0;
    for (const SweepRow& row : sweep.rows) {
        const std::string where = "sweep row at epsilon " + eps3(row.epsilon);
        if (row.epsilon <= prev_epsilon)
            throw validation_error("sweep epsilons must be strictly increasing near " +
                                   eps3(row.epsilon));
        prev_epsilon = row.epsilon;
        if (row.confusion.k != k)
            throw validation_error(where + " switches to " + std::to_string(row.confusion.k) +
                                   " classes");
        const std::int64_t total = row.confusion.total();
        if (total <= 0) throw validation_error(where + " has an empty confusion matrix");
        const double derived =
            static_cast<double>(row.confusion.diagonal()) / static_cast<double>(total);
        if (std::abs(derived - row.accuracy) > 1e-12)
            throw validation_error(where + " stores accuracy " + pct1(row.accuracy) +
                                   "% but its confusion matrix yields " + pct1(derived) + "%");
        if (static_cast<int>(row.per_class_accuracy.size()) != k)
            throw validation_error(where + " carries " +
                                   std::to_string(row.per_class_accuracy.size()) +
                                   " per-class rates for " + std::to_string(k) + " classes");
        for (int c = 0; c < k; ++c) {
            const std::int64_t seen = row.confusion.row_sum(c);
            if (seen == 0) continue;
            const double derived_c =
                static_cast<double>(row.confusion.at(c, c)) / static_cast<double>(seen);
            if (std::abs(derived_c - row.per_class_accuracy[c]) > 1e-12)
                throw validation_error(where + " disagrees with its confusion matrix on class " +
                                       std::to_string(c));
        }
    }
    if (sweep.rows.front().epsilon != 0.0)
        throw validation_error("sweep must start at the clean epsilon-0 row");
    if (std::abs(clean_accuracy - sweep.rows.front().accuracy) > 1e-12)
        throw validation_error("clean accuracy " + pct1(clean_accuracy) +
                               "% does not match the epsilon-0 sweep row");
    if (sweep.rows.size() >= 2) {
        if (first_attack_per_class != sweep.rows[1].per_class_accuracy)
            throw validation_error(
                "first-attack per-class rates do not match the first nonzero sweep row");
    } else if (!first_attack_per_class.empty()) {
        throw validation_error("first-attack per-class rates present without an attack row");
    }
    if (danger_zone_epsilon != danger_zone_threshold(sweep))
        throw validation_error("danger zone threshold does not match the sweep");
    if (mitigation.rows.empty())
        throw validation_error("robustness map has an empty mitigation report");
}

RobustnessMap build_robustness_map(ModelFingerprint fingerprint,
                                   std::vector<std::string> class_names, SweepResult sweep,
                                   MitigationReport mitigation) {
    if (sweep.rows.empty()) throw validation_error("robustness map has no sweep rows");
    RobustnessMap map;
    map.fingerprint = std::move(fingerprint);
    map.class_names = std::move(class_names);
    map.clean_accuracy = sweep.rows.front().accuracy;
    if (sweep.rows.size() >= 2) map.first_attack_per_class = sweep.rows[1].per_class_accuracy;
    map.danger_zone_epsilon = danger_zone_threshold(sweep);
    map.sweep = std::move(sweep);
    map.mitigation = std::move(mitigation);
    map.check_invariants();
    return map;
}

void DriftProfileDocument::check_invariants() const {
    if (profiles.empty()) throw validation_error("drift document has no model profiles");
    if (endpoint_url.empty()) throw validation_error("drift document endpoint url is empty");
    if (corpus_digest.empty()) throw validation_error("drift document corpus digest is empty");
    if (labels.empty()) throw validation_error("drift document has no label set");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i].index != static_cast<int>(i) || labels[i].name.empty())
            throw validation_error("drift document label set is not indexed 0..k-1");
    const std::vector<int>& ids = profiles.front().case_ids;
    for (const DriftProfile& p : profiles) {
        if (p.model_name.empty()) throw validation_error("drift profile has an empty model name");
        if (p.case_count <= 0 || static_cast<int>(p.case_ids.size()) != p.case_count)
            throw validation_error("drift profile for '" + p.model_name +
                                   "' has an inconsistent case count");
        if (p.case_ids != ids)
            throw validation_error("drift profiles cover different cases: '" + p.model_name +
                                   "' disagrees with '" + profiles.front().model_name + "'");
        for (const CaseOutcome& o : p.outcomes) {
            if (!o.parsed) continue;
            const int idx = o.parsed->index;
            if (idx < 0 || idx >= static_cast<int>(labels.size()) ||
                labels[static_cast<std::size_t>(idx)].name != o.parsed->name)
                throw validation_error("outcome for case " + std::to_string(o.case_id) +
                                       " parsed to a label outside the document's label set");
        }
    }
    if (profiles.size() >= 2) {
        if (!comparison) throw validation_error("drift document covers " +
                                                std::to_string(profiles.size()) +
                                                " models but has no comparison");
        if (comparison->model_names.size() != profiles.size())
            throw validation_error("drift comparison covers the wrong number of models");
        for (std::size_t i = 0; i < profiles.size(); ++i)
            if (comparison->model_names[i] != profiles[i].model_name)
                throw validation_error("drift comparison is out of order at model '" +
                                       profiles[i].model_name + "'");
    } else if (comparison) {
        throw validation_error("drift comparison present for a single-model document");
    }
}

DriftProfileDocument build_drift_document(std::string endpoint_url, double temperature,
                                          const CorpusManifest& corpus,
                                          std::vector<DriftProfile> profiles) {
    const std::vector<int> corpus_ids = corpus.case_ids();
    for (const DriftProfile& p : profiles)
        if (p.case_ids != corpus_ids)
            throw validation_error("profile for '" + p.model_name +
                                   "' was not scored over the given corpus");
    DriftProfileDocument doc;
    doc.endpoint_url = std::move(endpoint_url);
    doc.temperature = temperature;
    doc.corpus_digest = corpus_hash(corpus);
    doc.labels = corpus.labels;
    if (profiles.size() >= 2) doc.comparison = compare_models(profiles);
    doc.profiles = std::move(profiles);
    doc.check_invariants();
    return doc;
}

void emit_decay_csv(const SweepResult& sweep, const std::string& path, RateFormat rates) {
    if (sweep.rows.empty()) throw validation_error("decay csv needs at least one sweep row");
    std::ostringstream out;
    out << "epsilon,accuracy,ci_lower,ci_upper\n";
    char buf[160];
    for (const SweepRow& row : sweep.rows) {
        if (rates == RateFormat::fraction)
            std::snprintf(buf, sizeof buf, "%.3f,%.4f,%.4f,%.4f", row.epsilon, row.accuracy,
                          row.ci_lower, row.ci_upper);
        else
            std::snprintf(buf, sizeof buf, "%.3f,%.1f,%.1f,%.1f", row.epsilon,
                          row.accuracy * 100.0, row.ci_lower * 100.0, row.ci_upper * 100.0);
        out << buf << '\n';
    }
    write_text_file(path, out.str());
}

std::vector<DecayRow> parse_decay_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open decay csv '" + path + "'");
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(in, line)) return false;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    if (!next_line()) throw validation_error("decay csv '" + path + "' is empty");
    if (line != "epsilon,accuracy,ci_lower,ci_upper")
        throw validation_error("decay csv '" + path + "' has unexpected header '" + line + "'");

    std::vector<DecayRow> rows;
    int lineno = 1;
    while (next_line()) {
        ++lineno;
        const std::string where = "decay csv '" + path + "' line " + std::to_string(lineno);
        std::vector<double> fields;
        std::size_t start = 0;
        while (start <= line.size()) {
            const std::size_t comma = line.find(',', start);
            const std::size_t end = comma == std::string::npos ? line.size() : comma;
            double value = 0.0;
            const char* first = line.data() + start;
            const char* last = line.data() + end;
            const auto [ptr, ec] = std::from_chars(first, last, value);
            if (ec != std::errc{} || ptr != last)
                throw validation_error(where + ": '" + line.substr(start, end - start) +
                                       "' is not a number");
            fields.push_back(value);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 4)
            throw validation_error(where + " has " + std::to_string(fields.size()) +
                                   " fields, expected 4");
        rows.push_back(DecayRow{fields[0], fields[1], fields[2], fields[3]});
    }
    if (rows.empty()) throw validation_error("decay csv '" + path + "' has no data rows");
    return rows;
}

std::string sweep_interpretation(double epsilon, double accuracy, double clean_accuracy,
                                 double chance) {
    if (epsilon == 0.0) return "Clean baseline";
    if (accuracy <= chance + 0.05) return "Effectively random";
    if (accuracy < 0.5) return "Danger zone - below 50%";
    if (clean_accuracy - accuracy > 0.10) return "Clinically dangerous drop";
    return "Within tolerance";
}

std::string format_sweep_table(const SweepResult& sweep) {
    if (sweep.rows.empty()) throw validation_error("sweep table needs at least one row");
    const double clean = sweep.rows.front().accuracy;
    const int k = sweep.rows.front().confusion.k;
    const double chance = k > 0 ? 1.0 / k : 0.0;
    std::vector<std::vector<std::string>> rows;
    for (const SweepRow& row : sweep.rows)
        rows.push_back({eps3(row.epsilon), pct1(row.accuracy), pct1(row.ci_lower),
                        pct1(row.ci_upper),
                        sweep_interpretation(row.epsilon, row.accuracy, clean, chance)});
    return render_table(
        {"Epsilon", "Accuracy (%)", "95% CI Lower (%)", "95% CI Upper (%)",
         "Clinical Interpretation"},
        rows, {true, true, true, true, false});
}

std::string format_mitigation_table(const MitigationReport& report) {
    if (report.rows.empty()) throw validation_error("mitigation table needs at least one row");
    std::vector<std::vector<std::string>> rows;
    for (const MitigationRow& row : report.rows) {
        std::string delta = "-";
        if (row.condition != "clean") {
            delta = (row.delta_vs_clean >= 0 ? "+" : "") + pct1(row.delta_vs_clean) + "%";
        }
        rows.push_back({row.display_name, pct1(row.accuracy), delta, row.assessment});
    }
    return render_table({"Condition", "Accuracy (%)", "vs. Clean Baseline", "Clinical Assessment"},
                        rows, {false, true, true, false});
}

std::string format_drift_table(const std::vector<DriftProfile>& profiles) {
    if (profiles.empty()) throw validation_error("drift table needs at least one profile");
    std::vector<std::string> headers{"Language Register"};
    for (const DriftProfile& p : profiles) headers.push_back(p.model_name + " Accuracy");
    for (const DriftProfile& p : profiles) headers.push_back(p.model_name + " Consistency");
    std::vector<std::vector<std::string>> rows;
    for (const Register reg : all_registers()) {
        std::vector<std::string> cells{register_name(reg)};
        for (const DriftProfile& p : profiles) cells.push_back(pct1(p.summary(reg).accuracy) + "%");
        for (const DriftProfile& p : profiles)
            cells.push_back(pct0(p.summary(reg).consistency) + "%");
        rows.push_back(std::move(cells));
    }
    std::vector<bool> right(headers.size(), true);
    right[0] = false;
    return render_table(headers, rows, right);
}

namespace {

// Minimal SVG assembly. Coordinates print as plain integers when whole,
// otherwise with two decimals, so output never depends on stream state.
std::string num(double v) {
    char buf[40];
    if (v == std::floor(v) && std::abs(v) < 1e9)
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    else
        std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string xml_escape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (const char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

constexpr const char* kGreen = "#2e7d32";
constexpr const char* kRed = "#c62828";
constexpr const char* kBlue = "#1565c0";
constexpr const char* kInk = "#212121";
constexpr const char* kFaint = "#757575";
constexpr const char* kGrid = "#e0e0e0";
constexpr const char* kBand = "#90caf9";

class SvgBuilder {
public:
    SvgBuilder(int width, int height) {
        out_ += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
                std::to_string(width) + " " + std::to_string(height) + "\">\n";
        out_ += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" +
                std::to_string(height) + "\" fill=\"#ffffff\"/>\n";
    }

    void open_group(const std::string& cls) { out_ += "<g class=\"" + cls + "\">\n"; }
    void close_group() { out_ += "</g>\n"; }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width,
              const std::string& cls = "", const std::string& dash = "") {
        out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
                "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
                num(width) + "\"";
        if (!dash.empty()) out_ += " stroke-dasharray=\"" + dash + "\"";
        if (!cls.empty()) out_ += " class=\"" + cls + "\"";
        out_ += "/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& cls = "", double opacity = 1.0,
              const std::string& stroke = "") {
        out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"";
        if (opacity < 1.0) out_ += " fill-opacity=\"" + num(opacity) + "\"";
        if (!stroke.empty()) out_ += " stroke=\"" + stroke + "\"";
        if (!cls.empty()) out_ += " class=\"" + cls + "\"";
        out_ += "/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill,
                const std::string& cls = "") {
        out_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) +
                "\" fill=\"" + fill + "\"";
        if (!cls.empty()) out_ += " class=\"" + cls + "\"";
        out_ += "/>\n";
    }

    void poly(const char* tag, const std::vector<std::pair<double, double>>& pts,
              const std::string& fill, const std::string& stroke, double width,
              const std::string& cls, double opacity = 1.0) {
        out_ += std::string("<") + tag + " points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i) out_ += " ";
            out_ += num(pts[i].first) + "," + num(pts[i].second);
        }
        out_ += "\" fill=\"" + fill + "\"";
        if (opacity < 1.0) out_ += " fill-opacity=\"" + num(opacity) + "\"";
        if (!stroke.empty())
            out_ += " stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"";
        if (!cls.empty()) out_ += " class=\"" + cls + "\"";
        out_ += "/>\n";
    }

    void text(double x, double y, const std::string& s, double size, const std::string& anchor,
              const std::string& fill, bool bold = false, const std::string& extra = "") {
        out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + num(size) +
                "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\" fill=\"" + fill +
                "\"";
        if (bold) out_ += " font-weight=\"bold\"";
        if (!extra.empty()) out_ += " " + extra;
        out_ += ">" + xml_escape(s) + "</text>\n";
    }

    std::string take() {
        out_ += "</svg>\n";
        return std::move(out_);
    }

private:
    std::string out_;
};

std::string decay_chart_svg(const SweepResult& sweep) {
    const auto& rows = sweep.rows;
    const int W = 960, H = 540, L = 70, R = 190, T = 56, B = 64;
    const double pw = W - L - R, ph = H - T - B;
    const double xmax = std::max(rows.back().epsilon, 1e-9);
    auto X = [&](double e) { return L + e / xmax * pw; };
    auto Y = [&](double a) { return T + (1.0 - a) * ph; };
    const double clean = rows.front().accuracy;
    const int k = rows.front().confusion.k;
    const double chance = k > 0 ? 1.0 / k : 0.0;

    SvgBuilder svg(W, H);
    svg.text(W / 2.0, 24, "Diagnostic accuracy under attack", 18, "middle", kInk, true);
    svg.text(W / 2.0, 44,
             "single-step gradient sweep, N=" + std::to_string(rows.front().confusion.total()) +
                 ", 95% " + ci_method_name(sweep.ci_method) + " interval",
             13, "middle", kFaint);

    for (int t = 0; t <= 5; ++t) {
        const double a = t / 5.0;
        svg.line(L, Y(a), L + pw, Y(a), kGrid, 1);
        svg.text(L - 8, Y(a) + 4, pct0(a) + "%", 12, "end", kFaint);
    }
    for (int t = 0; t <= 6; ++t) {
        const double e = xmax * t / 6.0;
        svg.line(X(e), T + ph, X(e), T + ph + 5, kFaint, 1);
        svg.text(X(e), T + ph + 20, fmt("%.2f", e), 12, "middle", kFaint);
    }
    svg.line(L, T, L, T + ph, kInk, 1.5, "axis");
    svg.line(L, T + ph, L + pw, T + ph, kInk, 1.5, "axis");
    svg.text(L + pw / 2.0, H - 14, "epsilon (fraction of intensity range)", 13, "middle", kInk);
    svg.text(18, T + ph / 2.0, "accuracy", 13, "middle", kInk, false,
             "transform=\"rotate(-90 18 " + num(T + ph / 2.0) + ")\"");

    std::vector<std::pair<double, double>> band;
    for (const SweepRow& row : rows) band.emplace_back(X(row.epsilon), Y(row.ci_upper));
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
        band.emplace_back(X(it->epsilon), Y(it->ci_lower));
    svg.poly("polygon", band, kBand, "", 0, "ci-band", 0.35);

    svg.line(L, Y(clean), L + pw, Y(clean), kGreen, 1.5, "reference-line", "7 5");
    svg.text(L + pw + 8, Y(clean) + 4, "clean " + pct1(clean) + "%", 12, "start", kGreen);
    svg.line(L, Y(chance), L + pw, Y(chance), kFaint, 1.5, "reference-line", "7 5");
    svg.text(L + pw + 8, Y(chance) + 4, "chance " + pct1(chance) + "%", 12, "start", kFaint);

    std::vector<std::pair<double, double>> pts;
    for (const SweepRow& row : rows) pts.emplace_back(X(row.epsilon), Y(row.accuracy));
    svg.poly("polyline", pts, "none", kBlue, 2.5, "decay-line");
    for (const auto& [x, y] : pts) svg.circle(x, y, 4, kBlue, "data-point");

    return svg.take();
}

std::string per_class_chart_svg(const RobustnessMap& map) {
    const auto& rows = map.sweep.rows;
    const int k = static_cast<int>(map.class_names.size());
    const double attack_epsilon = rows[1].epsilon;
    const int W = 720, H = 480, L = 80, R = 30, T = 84, B = 70;
    const double pw = W - L - R, ph = H - T - B;
    auto Y = [&](double a) { return T + (1.0 - a) * ph; };

    SvgBuilder svg(W, H);
    svg.text(W / 2.0, 24, "Per-class collapse at the first attack level", 18, "middle", kInk,
             true);
    svg.text(W / 2.0, 44, "clean vs epsilon " + eps3(attack_epsilon), 13, "middle", kFaint);
    for (int t = 0; t <= 5; ++t) {
        const double a = t / 5.0;
        svg.line(L, Y(a), L + pw, Y(a), kGrid, 1);
        svg.text(L - 8, Y(a) + 4, pct0(a) + "%", 12, "end", kFaint);
    }
    svg.line(L, T, L, T + ph, kInk, 1.5, "axis");
    svg.line(L, T + ph, L + pw, T + ph, kInk, 1.5, "axis");

    const double group_w = pw / k;
    const double bar_w = std::min(56.0, group_w / 3.0);
    for (int c = 0; c < k; ++c) {
        const double center = L + group_w * (c + 0.5);
        const double clean = rows.front().per_class_accuracy[c];
        const double attacked = map.first_attack_per_class[c];
        svg.rect(center - bar_w - 5, Y(clean), bar_w, ph - (Y(clean) - T), kGreen, "class-bar");
        svg.rect(center + 5, Y(attacked), bar_w, ph - (Y(attacked) - T), kRed, "class-bar");
        svg.text(center - bar_w / 2.0 - 5, Y(clean) - 6, pct1(clean), 12, "middle", kGreen);
        svg.text(center + bar_w / 2.0 + 5, Y(attacked) - 6, pct1(attacked), 12, "middle", kRed);
        svg.text(center, T + ph + 22, map.class_names[c], 13, "middle", kInk);
    }
    svg.rect(W - R - 190, 56, 14, 14, kGreen);
    svg.text(W - R - 170, 67, "clean", 12, "start", kInk);
    svg.rect(W - R - 110, 56, 14, 14, kRed);
    svg.text(W - R - 90, 67, "epsilon " + eps3(attack_epsilon), 12, "start", kInk);
    return svg.take();
}

std::string mitigation_chart_svg(const RobustnessMap& map) {
    const MitigationReport& report = map.mitigation;
    const int n = static_cast<int>(report.rows.size());
    const int W = 900, L = 280, R = 90, T = 72, row_h = 64, B = 56;
    const int H = T + n * row_h + B;
    const double pw = W - L - R;
    auto X = [&](double a) { return L + a * pw; };

    SvgBuilder svg(W, H);
    svg.text(W / 2.0, 24, "Mitigation stress test at epsilon " + eps3(report.epsilon), 18,
             "middle", kInk, true);
    svg.rect(X(0), T, X(0.5) - X(0), n * row_h, kRed, "danger-zone", 0.10);
    svg.line(X(0.5), T, X(0.5), T + n * row_h, kRed, 1, "", "6 4");
    svg.text(X(0.25), T - 10, "danger zone: below 50%", 12, "middle", kRed);
    for (int t = 0; t <= 4; ++t) {
        const double a = t / 4.0;
        svg.line(X(a), T + n * row_h, X(a), T + n * row_h + 5, kFaint, 1);
        svg.text(X(a), T + n * row_h + 20, pct0(a) + "%", 12, "middle", kFaint);
    }
    for (int i = 0; i < n; ++i) {
        const MitigationRow& row = report.rows[i];
        const double y = T + i * row_h;
        std::string fill = kBlue;
        if (row.condition == "clean") fill = kGreen;
        if (row.condition == "adversarial-no-defense") fill = kRed;
        svg.text(L - 12, y + 32, row.display_name, 13, "end", kInk);
        svg.rect(X(0), y + 14, row.accuracy * pw, 26, fill, "mitigation-bar");
        svg.text(X(row.accuracy) + 8, y + 32, pct1(row.accuracy) + "%", 13, "start", kInk, true);
        svg.text(X(0) + 4, y + 54, row.assessment, 11, "start", kFaint);
    }
    svg.line(X(0), T, X(0), T + n * row_h, kInk, 1.5, "axis");
    svg.line(X(0), T + n * row_h, X(1.0), T + n * row_h, kInk, 1.5, "axis");
    return svg.take();
}

std::string heatmap_svg(const DriftProfile& profile) {
    const int cell = 40, gap = 4;
    const int cols = profile.case_count;
    const auto& regs = all_registers();
    const int rows = static_cast<int>(regs.size());
    const int L = 210, T = 86, R = 20, B = 64;
    const int W = L + cols * (cell + gap) - gap + R;
    const int H = T + rows * (cell + gap) - gap + B;

    SvgBuilder svg(W, H);
    svg.text(W / 2.0, 26, profile.model_name + " - per-case outcomes by register", 18, "middle",
             kInk, true);
    for (int c = 0; c < cols; ++c)
        svg.text(L + c * (cell + gap) + cell / 2.0, T - 10,
                 std::to_string(profile.case_ids[c]), 12, "middle", kFaint);
    for (int r = 0; r < rows; ++r) {
        const double y = T + r * (cell + gap);
        svg.text(L - 10, y + cell / 2.0 + 4, register_name(regs[r]), 13, "end", kInk);
        for (int c = 0; c < cols; ++c) {
            const CaseOutcome& o = profile.outcome(profile.case_ids[c], regs[r]);
            svg.rect(L + c * (cell + gap), y, cell, cell, o.correct ? kGreen : kRed,
                     "heatmap-cell");
        }
    }
    const double ly = H - 28;
    svg.rect(L, ly, 14, 14, kGreen);
    svg.text(L + 20, ly + 11, "correct", 12, "start", kInk);
    svg.rect(L + 90, ly, 14, 14, kRed);
    svg.text(L + 110, ly + 11, "incorrect or unparseable", 12, "start", kInk);
    return svg.take();
}

void draw_image_panel(SvgBuilder& svg, const Tensor& chw, double ox, double oy, double scale) {
    const int C = chw.shape[0], Hh = chw.shape[1], Ww = chw.shape[2];
    for (int y = 0; y < Hh; ++y) {
        for (int x = 0; x < Ww; ++x) {
            int rgb[3];
            for (int c = 0; c < 3; ++c) {
                const int src = C == 1 ? 0 : std::min(c, C - 1);
                const float v = chw.data[(static_cast<std::int64_t>(src) * Hh + y) * Ww + x];
                rgb[c] = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }
            char color[24];
            std::snprintf(color, sizeof color, "rgb(%d,%d,%d)", rgb[0], rgb[1], rgb[2]);
            svg.rect(ox + x * scale, oy + y * scale, scale, scale, color, "pixel");
        }
    }
}

std::string triptych_svg(const RobustnessMap& map,
                         const std::vector<AdversarialExample>& examples) {
    const double scale = 4.0;
    const int side = examples.front().clean.pixels.shape[1];
    const double panel = side * scale;
    const int L = 150, T = 84, gapx = 36, rowpitch = static_cast<int>(panel) + 56;
    const int W = L + static_cast<int>(3 * panel) + 2 * gapx + 40;
    const int H = T + static_cast<int>(examples.size()) * rowpitch + 16;
    const std::string attack_eps = eps3(map.mitigation.epsilon);

    SvgBuilder svg(W, H);
    svg.text(W / 2.0, 26, "Clean vs adversarial inputs", 18, "middle", kInk, true);
    svg.text(W / 2.0, 46, "perturbation at epsilon " + attack_eps + ", amplified x10", 13,
             "middle", kFaint);
    const char* headers[3] = {"Clean", "Adversarial", "Perturbation x10"};
    for (int p = 0; p < 3; ++p)
        svg.text(L + p * (panel + gapx) + panel / 2.0, T - 12, headers[p], 13, "middle", kInk,
                 true);

    for (std::size_t i = 0; i < examples.size(); ++i) {
        const AdversarialExample& ex = examples[i];
        const double oy = T + i * rowpitch;
        svg.text(L - 16, oy + panel / 2.0, ex.clean.label.name, 13, "end", kInk, true);
        const Tensor noise = perturbation_map(ex.clean, ex.adversarial, 10.0f);
        const Tensor* panels[3] = {&ex.clean.pixels, &ex.adversarial.pixels, &noise};
        for (int p = 0; p < 3; ++p) {
            const double ox = L + p * (panel + gapx);
            svg.open_group("panel");
            draw_image_panel(svg, *panels[p], ox, oy, scale);
            svg.rect(ox, oy, panel, panel, "none", "", 1.0, "#424242");
            svg.close_group();
        }
        const int preds[2] = {ex.clean_prediction, ex.adversarial_prediction};
        for (int p = 0; p < 2; ++p) {
            const bool hit = preds[p] == ex.clean.label.index;
            svg.text(L + p * (panel + gapx) + panel / 2.0, oy + panel + 18,
                     "model: " + map.class_names[preds[p]], 12, "middle", hit ? kGreen : kRed);
        }
        svg.text(L + 2 * (panel + gapx) + panel / 2.0, oy + panel + 18, "signed, around mid-gray",
                 12, "middle", kFaint);
    }
    return svg.take();
}

}  // namespace

void emit_decay_figure(const SweepResult& sweep, const std::string& path) {
    if (sweep.rows.size() < 2)
        throw validation_error("decay figure needs at least one nonzero attack level");
    write_text_file(path, decay_chart_svg(sweep));
}

std::vector<std::string> emit_robustness_figures(const RobustnessMap& map,
                                                 const std::vector<AdversarialExample>& examples,
                                                 const std::string& out_dir) {
    map.check_invariants();
    if (map.sweep.rows.size() < 2 || map.first_attack_per_class.empty())
        throw validation_error("figures need at least one nonzero attack level");
    for (const AdversarialExample& ex : examples) {
        ex.clean.check_invariants();
        ex.adversarial.check_invariants();
        const int k = static_cast<int>(map.class_names.size());
        if (ex.clean_prediction < 0 || ex.clean_prediction >= k || ex.adversarial_prediction < 0 ||
            ex.adversarial_prediction >= k)
            throw validation_error("example prediction index outside the class range");
    }
    ensure_directory(out_dir);
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        const std::string path = join_path(out_dir, name);
        write_text_file(path, content);
        written.push_back(path);
    };
    emit("robustness_decay.svg", decay_chart_svg(map.sweep));
    emit("per_class_collapse.svg", per_class_chart_svg(map));
    emit("mitigation_bars.svg", mitigation_chart_svg(map));
    if (!examples.empty()) emit("adversarial_triptych.svg", triptych_svg(map, examples));
    return written;
}

std::vector<std::string> emit_drift_figures(const std::vector<DriftProfile>& profiles,
                                            const std::string& out_dir) {
    ensure_directory(out_dir);
    std::vector<std::string> written;
    for (const DriftProfile& profile : profiles) {
        if (profile.case_count <= 0)
            throw validation_error("drift heatmap needs a scored profile");
        const std::string path =
            join_path(out_dir, "drift_heatmap_" + slug(profile.model_name) + ".svg");
        write_text_file(path, heatmap_svg(profile));
        written.push_back(path);
    }
    return written;
}

const char* const kBundleSchemaVersion = "1";

std::string format_summary(const RobustnessMap* map, const DriftProfileDocument* drift,
                           const std::string& generated_at) {
    if (!map && !drift)
        throw validation_error("summary needs a robustness map or a drift document");
    if (generated_at.empty()) throw validation_error("summary needs a generation timestamp");
    std::ostringstream out;
    out << "Clinical AI safety audit - summary\n";
    out << "==================================\n";
    out << "Generated at:   " << generated_at << "\n";
    out << "Schema version: " << kBundleSchemaVersion << "\n";
    if (map) {
        map->check_invariants();
        const auto& rows = map->sweep.rows;
        out << "\nAdversarial robustness\n";
        out << "----------------------\n";
        out << "Model:           " << map->fingerprint.architecture << "\n";
        out << "Seed:            " << map->fingerprint.seed << "\n";
        out << "Checkpoint hash: " << map->fingerprint.checkpoint_hash << "\n";
        out << "Evaluation set:  N=" << rows.front().confusion.total() << "\n";
        out << "Clean accuracy:  " << pct1(map->clean_accuracy) << "%\n";
        if (map->danger_zone_epsilon)
            out << "Danger zone:     accuracy first drops below 50% at epsilon "
                << eps3(*map->danger_zone_epsilon) << "\n";
        else
            out << "Danger zone:     accuracy never drops below 50% on this grid\n";
        out << "\n" << format_sweep_table(map->sweep);
        if (!map->first_attack_per_class.empty()) {
            out << "\nPer-class accuracy at epsilon " << eps3(rows[1].epsilon) << ":";
            for (std::size_t c = 0; c < map->first_attack_per_class.size(); ++c) {
                out << (c ? ", " : " ") << map->class_names[c] << " "
                    << pct1(map->first_attack_per_class[c]) << "%";
            }
            out << "\n";
        }
        out << "\nMitigation stress test at epsilon " << eps3(map->mitigation.epsilon) << "\n";
        out << format_mitigation_table(map->mitigation);
    }
    if (drift) {
        drift->check_invariants();
        out << "\nLanguage drift\n";
        out << "--------------\n";
        out << "Endpoint:    " << drift->endpoint_url << "\n";
        out << "Temperature: " << fmt("%.1f", drift->temperature) << "\n";
        out << "Corpus hash: " << drift->corpus_digest << " ("
            << drift->profiles.front().case_count << " cases x " << all_registers().size()
            << " registers)\n";
        out << "\n" << format_drift_table(drift->profiles) << "\n";
        for (const DriftProfile& p : drift->profiles) {
            out << "Flip cases - " << p.model_name << ": "
                << (p.flip_cases.empty() ? "none" : join_ints(p.flip_cases)) << "\n";
        }
    }
    return out.str();
}

namespace {

nlohmann::json confusion_to_json(const ConfusionMatrix& cm) {
    nlohmann::json grid = nlohmann::json::array();
    for (int t = 0; t < cm.k; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int p = 0; p < cm.k; ++p) row.push_back(cm.at(t, p));
        grid.push_back(std::move(row));
    }
    return grid;
}

const nlohmann::json& need(const nlohmann::json& doc, const char* key) {
    const auto it = doc.find(key);
    if (it == doc.end())
        throw validation_error(std::string("artifact JSON is missing key '") + key + "'");
    return *it;
}

double need_number(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (!v.is_number())
        throw validation_error(std::string("artifact key '") + key + "' must be a number");
    return v.get<double>();
}

std::int64_t need_integer(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (!v.is_number_integer())
        throw validation_error(std::string("artifact key '") + key + "' must be an integer");
    return v.get<std::int64_t>();
}

std::uint64_t need_u64(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw validation_error(std::string("artifact key '") + key + "' must be a non-negative integer");
}

std::string need_string(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (!v.is_string())
        throw validation_error(std::string("artifact key '") + key + "' must be a string");
    return v.get<std::string>();
}

bool need_bool(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (!v.is_boolean())
        throw validation_error(std::string("artifact key '") + key + "' must be a boolean");
    return v.get<bool>();
}

const nlohmann::json& need_array(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (!v.is_array())
        throw validation_error(std::string("artifact key '") + key + "' must be an array");
    return v;
}

const nlohmann::json& need_object(const nlohmann::json& doc, const char* key) {
    const nlohmann::json& v = need(doc, key);
    if (!v.is_object())
        throw validation_error(std::string("artifact key '") + key + "' must be an object");
    return v;
}

std::vector<double> need_number_vector(const nlohmann::json& doc, const char* key) {
    std::vector<double> out;
    for (const nlohmann::json& v : need_array(doc, key)) {
        if (!v.is_number())
            throw validation_error(std::string("artifact key '") + key + "' holds a non-number");
        out.push_back(v.get<double>());
    }
    return out;
}

std::vector<int> need_int_vector(const nlohmann::json& doc, const char* key) {
    std::vector<int> out;
    for (const nlohmann::json& v : need_array(doc, key)) {
        if (!v.is_number_integer())
            throw validation_error(std::string("artifact key '") + key + "' holds a non-integer");
        out.push_back(v.get<int>());
    }
    return out;
}

std::vector<std::string> need_string_vector(const nlohmann::json& doc, const char* key) {
    std::vector<std::string> out;
    for (const nlohmann::json& v : need_array(doc, key)) {
        if (!v.is_string())
            throw validation_error(std::string("artifact key '") + key + "' holds a non-string");
        out.push_back(v.get<std::string>());
    }
    return out;
}

void expect_kind(const nlohmann::json& doc, const char* kind) {
    const std::string have = need_string(doc, "kind");
    if (have != kind)
        throw validation_error("artifact kind is '" + have + "', expected '" + kind + "'");
}

ConfusionMatrix confusion_from_json(const nlohmann::json& grid) {
    if (!grid.is_array() || grid.empty())
        throw validation_error("confusion matrix must be a non-empty array of rows");
    const int k = static_cast<int>(grid.size());
    ConfusionMatrix cm(k);
    for (int t = 0; t < k; ++t) {
        const nlohmann::json& row = grid[static_cast<std::size_t>(t)];
        if (!row.is_array() || static_cast<int>(row.size()) != k)
            throw validation_error("confusion matrix is not square");
        for (int p = 0; p < k; ++p) {
            const nlohmann::json& cell = row[static_cast<std::size_t>(p)];
            if (!cell.is_number_integer() || cell.get<std::int64_t>() < 0)
                throw validation_error("confusion matrix holds a negative or fractional count");
            cm.at(t, p) = cell.get<std::int64_t>();
        }
    }
    return cm;
}

nlohmann::json sweep_row_to_json(const SweepRow& row) {
    return {{"epsilon", row.epsilon},
            {"accuracy", row.accuracy},
            {"ci_lower", row.ci_lower},
            {"ci_upper", row.ci_upper},
            {"per_class_accuracy", row.per_class_accuracy},
            {"confusion", confusion_to_json(row.confusion)}};
}

SweepRow sweep_row_from_json(const nlohmann::json& doc, int index) {
    SweepRow row;
    row.epsilon = need_number(doc, "epsilon");
    row.accuracy = need_number(doc, "accuracy");
    row.ci_lower = need_number(doc, "ci_lower");
    row.ci_upper = need_number(doc, "ci_upper");
    row.per_class_accuracy = need_number_vector(doc, "per_class_accuracy");
    row.confusion = confusion_from_json(need(doc, "confusion"));
    const std::string where = "sweep row " + std::to_string(index);
    if (row.epsilon < 0.0 || row.epsilon > 1.0)
        throw validation_error(where + " epsilon is outside [0,1]");
    if (row.ci_lower < 0.0 || row.ci_upper > 1.0 ||
        !(row.ci_lower <= row.accuracy && row.accuracy <= row.ci_upper))
        throw validation_error(where + " confidence interval does not bracket its accuracy");
    const std::int64_t total = row.confusion.total();
    if (total <= 0) throw validation_error(where + " has an empty confusion matrix");
    if (std::abs(static_cast<double>(row.confusion.diagonal()) / total - row.accuracy) > 1e-12)
        throw validation_error(where + " accuracy cannot be reproduced from its confusion matrix");
    if (static_cast<int>(row.per_class_accuracy.size()) != row.confusion.k)
        throw validation_error(where + " per-class accuracy has the wrong length");
    for (int c = 0; c < row.confusion.k; ++c) {
        const std::int64_t n = row.confusion.row_sum(c);
        if (n <= 0) throw validation_error(where + " has a class with no samples");
        if (std::abs(static_cast<double>(row.confusion.at(c, c)) / n -
                     row.per_class_accuracy[static_cast<std::size_t>(c)]) > 1e-12)
            throw validation_error(where +
                                   " per-class accuracy cannot be reproduced from its confusion "
                                   "matrix");
    }
    return row;
}

nlohmann::json mitigation_row_to_json(const MitigationRow& row) {
    return {{"condition", row.condition},
            {"display_name", row.display_name},
            {"accuracy", row.accuracy},
            {"delta_vs_clean", row.delta_vs_clean},
            {"per_class_accuracy", row.per_class_accuracy},
            {"assessment", row.assessment}};
}

MitigationRow mitigation_row_from_json(const nlohmann::json& doc) {
    MitigationRow row;
    row.condition = need_string(doc, "condition");
    row.display_name = need_string(doc, "display_name");
    row.accuracy = need_number(doc, "accuracy");
    row.delta_vs_clean = need_number(doc, "delta_vs_clean");
    row.per_class_accuracy = need_number_vector(doc, "per_class_accuracy");
    row.assessment = need_string(doc, "assessment");
    if (row.condition.empty()) throw validation_error("mitigation row has an empty condition key");
    if (row.accuracy < 0.0 || row.accuracy > 1.0)
        throw validation_error("mitigation accuracy for '" + row.condition +
                               "' is outside [0,1]");
    return row;
}

// Re-derives correctness tallies, rates, consistency flags and the flip
// list from the parsed outcomes, the same way the audit scores a live
// run. A profile whose stored numbers disagree is a tampered or corrupt
// artifact.
void verify_profile_consistency(const DriftProfile& profile) {
    const std::string who = "drift profile for '" + profile.model_name + "'";
    const auto regs = all_registers();
    const std::size_t per_case = regs.size();
    if (profile.case_ids.empty()) throw validation_error(who + " has no cases");
    if (profile.case_count != static_cast<int>(profile.case_ids.size()) ||
        profile.outcomes.size() != profile.case_ids.size() * per_case)
        throw validation_error(who + " must score every case in every register");
    for (std::size_t ci = 0; ci < profile.case_ids.size(); ++ci)
        for (std::size_t ri = 0; ri < per_case; ++ri) {
            const CaseOutcome& o = profile.outcomes[ci * per_case + ri];
            if (o.case_id != profile.case_ids[ci] || o.reg != regs[ri])
                throw validation_error(who + " outcomes are out of audit order");
        }
    for (std::size_t ci = 0; ci < profile.case_ids.size(); ++ci) {
        const CaseOutcome& english = profile.outcomes[ci * per_case];
        for (std::size_t ri = 0; ri < per_case; ++ri) {
            const CaseOutcome& o = profile.outcomes[ci * per_case + ri];
            if (regs[ri] == Register::standard_english) {
                if (o.consistent_with_english.has_value())
                    throw validation_error(who +
                                           " marks an English outcome as consistent with itself");
                continue;
            }
            const bool expected = o.parsed.has_value() && english.parsed.has_value() &&
                                  o.parsed->index == english.parsed->index;
            if (!o.consistent_with_english.has_value() ||
                *o.consistent_with_english != expected)
                throw validation_error(who +
                                       " consistency flags cannot be reproduced from the parsed "
                                       "labels");
        }
    }
    const int n = profile.case_count;
    if (static_cast<int>(profile.registers.size()) != static_cast<int>(per_case))
        throw validation_error(who + " must summarize every register");
    for (std::size_t ri = 0; ri < per_case; ++ri) {
        const Register reg = regs[ri];
        int correct = 0, consistent = 0;
        for (const CaseOutcome& o : profile.outcomes) {
            if (o.reg != reg) continue;
            if (o.correct) ++correct;
            if (o.consistent_with_english.value_or(false)) ++consistent;
        }
        const RegisterSummary& s = profile.summary(reg);
        const bool english = reg == Register::standard_english;
        if (english) consistent = n;
        const double consistency = english ? 1.0 : static_cast<double>(consistent) / n;
        if (s.correct_count != correct || s.consistent_count != consistent)
            throw validation_error(who + " tallies cannot be reproduced from its outcomes");
        if (std::abs(s.accuracy - static_cast<double>(correct) / n) > 1e-12 ||
            std::abs(s.consistency - consistency) > 1e-12)
            throw validation_error(who + " rates cannot be reproduced from its outcomes");
    }
    std::vector<int> flips;
    for (std::size_t ci = 0; ci < profile.case_ids.size(); ++ci) {
        std::set<int> distinct;
        for (std::size_t ri = 0; ri < per_case; ++ri) {
            const CaseOutcome& o = profile.outcomes[ci * per_case + ri];
            distinct.insert(o.parsed.has_value() ? o.parsed->index : -1);
        }
        if (distinct.size() > 1) flips.push_back(profile.case_ids[ci]);
    }
    if (flips != profile.flip_cases)
        throw validation_error(who + " flip cases cannot be reproduced from its outcomes");
}

}  // namespace

nlohmann::json sweep_to_json(const SweepResult& sweep) {
    nlohmann::json doc;
    doc["schema_version"] = kBundleSchemaVersion;
    doc["kind"] = "sweep";
    doc["ci_method"] = ci_method_name(sweep.ci_method);
    nlohmann::json rows = nlohmann::json::array();
    for (const SweepRow& row : sweep.rows) rows.push_back(sweep_row_to_json(row));
    doc["rows"] = std::move(rows);
    return doc;
}

SweepResult sweep_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw validation_error("sweep artifact must be a JSON object");
    expect_kind(doc, "sweep");
    SweepResult sweep;
    sweep.ci_method = parse_ci_method(need_string(doc, "ci_method"));
    const nlohmann::json& rows = need_array(doc, "rows");
    if (rows.empty()) throw validation_error("sweep artifact has no rows");
    int index = 0;
    for (const nlohmann::json& row : rows) sweep.rows.push_back(sweep_row_from_json(row, index++));
    for (std::size_t i = 1; i < sweep.rows.size(); ++i) {
        if (!(sweep.rows[i - 1].epsilon < sweep.rows[i].epsilon))
            throw validation_error("sweep epsilons must increase strictly");
        if (sweep.rows[i].confusion.k != sweep.rows.front().confusion.k)
            throw validation_error("sweep rows disagree on the class count");
    }
    return sweep;
}

nlohmann::json mitigation_to_json(const MitigationReport& report) {
    nlohmann::json doc;
    doc["schema_version"] = kBundleSchemaVersion;
    doc["kind"] = "mitigation";
    doc["epsilon"] = report.epsilon;
    nlohmann::json rows = nlohmann::json::array();
    for (const MitigationRow& row : report.rows) rows.push_back(mitigation_row_to_json(row));
    doc["rows"] = std::move(rows);
    return doc;
}

MitigationReport mitigation_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw validation_error("mitigation artifact must be a JSON object");
    expect_kind(doc, "mitigation");
    MitigationReport report;
    report.epsilon = need_number(doc, "epsilon");
    if (report.epsilon < 0.0 || report.epsilon > 1.0)
        throw validation_error("mitigation epsilon is outside [0,1]");
    for (const nlohmann::json& row : need_array(doc, "rows"))
        report.rows.push_back(mitigation_row_from_json(row));
    if (report.rows.empty()) throw validation_error("mitigation artifact has no rows");
    const MitigationRow* clean = nullptr;
    for (const MitigationRow& row : report.rows)
        if (row.condition == "clean") clean = &row;
    if (!clean) throw validation_error("mitigation artifact has no clean baseline row");
    for (const MitigationRow& row : report.rows)
        if (std::abs(row.delta_vs_clean - (row.accuracy - clean->accuracy)) > 1e-12)
            throw validation_error("mitigation delta for '" + row.condition +
                                   "' cannot be reproduced from the clean baseline");
    return report;
}

nlohmann::json robustness_map_to_json(const RobustnessMap& map, const std::string& generated_at) {
    nlohmann::json doc;
    doc["schema_version"] = kBundleSchemaVersion;
    doc["kind"] = "robustness-map";
    doc["generated_at"] = generated_at;
    doc["inputs"] = {{"checkpoint", map.fingerprint.checkpoint_hash}};
    doc["model"] = {{"architecture", map.fingerprint.architecture},
                    {"seed", map.fingerprint.seed},
                    {"checkpoint_hash", map.fingerprint.checkpoint_hash}};
    doc["class_names"] = map.class_names;
    doc["clean_accuracy"] = map.clean_accuracy;
    doc["danger_zone_epsilon"] =
        map.danger_zone_epsilon ? nlohmann::json(*map.danger_zone_epsilon) : nlohmann::json();
    doc["first_attack_per_class"] = map.first_attack_per_class;
    doc["ci_method"] = ci_method_name(map.sweep.ci_method);
    nlohmann::json sweep = nlohmann::json::array();
    for (const SweepRow& row : map.sweep.rows) sweep.push_back(sweep_row_to_json(row));
    doc["sweep"] = std::move(sweep);
    nlohmann::json mit;
    mit["epsilon"] = map.mitigation.epsilon;
    nlohmann::json mit_rows = nlohmann::json::array();
    for (const MitigationRow& row : map.mitigation.rows)
        mit_rows.push_back(mitigation_row_to_json(row));
    mit["rows"] = std::move(mit_rows);
    doc["mitigation"] = std::move(mit);
    return doc;
}

RobustnessMap robustness_map_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw validation_error("robustness map artifact must be a JSON object");
    expect_kind(doc, "robustness-map");
    RobustnessMap map;
    const nlohmann::json& model = need_object(doc, "model");
    map.fingerprint.architecture = need_string(model, "architecture");
    map.fingerprint.seed = need_u64(model, "seed");
    map.fingerprint.checkpoint_hash = need_string(model, "checkpoint_hash");
    if (need_string(need_object(doc, "inputs"), "checkpoint") != map.fingerprint.checkpoint_hash)
        throw validation_error("robustness map inputs do not match the model fingerprint");
    map.class_names = need_string_vector(doc, "class_names");
    map.clean_accuracy = need_number(doc, "clean_accuracy");
    const nlohmann::json& danger = need(doc, "danger_zone_epsilon");
    if (!danger.is_null()) {
        if (!danger.is_number())
            throw validation_error("artifact key 'danger_zone_epsilon' must be a number or null");
        map.danger_zone_epsilon = danger.get<double>();
    }
    map.first_attack_per_class = need_number_vector(doc, "first_attack_per_class");
    map.sweep.ci_method = parse_ci_method(need_string(doc, "ci_method"));
    int index = 0;
    for (const nlohmann::json& row : need_array(doc, "sweep"))
        map.sweep.rows.push_back(sweep_row_from_json(row, index++));
    const nlohmann::json& mit = need_object(doc, "mitigation");
    map.mitigation.epsilon = need_number(mit, "epsilon");
    for (const nlohmann::json& row : need_array(mit, "rows"))
        map.mitigation.rows.push_back(mitigation_row_from_json(row));
    map.check_invariants();
    return map;
}

nlohmann::json drift_document_to_json(const DriftProfileDocument& drift,
                                      const std::string& generated_at) {
    nlohmann::json doc;
    doc["schema_version"] = kBundleSchemaVersion;
    doc["kind"] = "drift-profile";
    doc["generated_at"] = generated_at;
    doc["inputs"] = {{"corpus", drift.corpus_digest}};
    doc["endpoint"] = {{"base_url", drift.endpoint_url}, {"temperature", drift.temperature}};
    nlohmann::json labels = nlohmann::json::array();
    for (const ClassLabel& label : drift.labels)
        labels.push_back({{"index", label.index}, {"name", label.name}});
    doc["labels"] = std::move(labels);
    doc["case_ids"] = drift.profiles.front().case_ids;
    nlohmann::json regs = nlohmann::json::array();
    for (const Register reg : all_registers()) regs.push_back(register_key(reg));
    doc["registers"] = std::move(regs);

    nlohmann::json models = nlohmann::json::array();
    for (const DriftProfile& p : drift.profiles) {
        nlohmann::json summaries;
        for (const Register reg : all_registers()) {
            const RegisterSummary& s = p.summary(reg);
            summaries[register_key(reg)] = {{"accuracy", s.accuracy},
                                            {"consistency", s.consistency},
                                            {"correct_count", s.correct_count},
                                            {"consistent_count", s.consistent_count}};
        }
        nlohmann::json outcomes = nlohmann::json::array();
        for (const CaseOutcome& o : p.outcomes) {
            outcomes.push_back(
                {{"case_id", o.case_id},
                 {"register", register_key(o.reg)},
                 {"parsed", o.parsed ? nlohmann::json(o.parsed->name) : nlohmann::json()},
                 {"correct", o.correct},
                 {"consistent_with_english", o.consistent_with_english
                                                 ? nlohmann::json(*o.consistent_with_english)
                                                 : nlohmann::json()},
                 {"attempts", o.attempt_count},
                 {"raw_response", o.raw_response}});
        }
        models.push_back({{"model", p.model_name},
                          {"summaries", std::move(summaries)},
                          {"flip_cases", p.flip_cases},
                          {"outcomes", std::move(outcomes)}});
    }
    doc["models"] = std::move(models);

    if (drift.comparison) {
        nlohmann::json cmp;
        cmp["model_names"] = drift.comparison->model_names;
        nlohmann::json cmp_rows = nlohmann::json::array();
        for (const ModelComparison::Row& row : drift.comparison->rows) {
            cmp_rows.push_back({{"register", register_key(row.reg)},
                                {"accuracy", row.accuracy},
                                {"consistency", row.consistency},
                                {"drop_pp", row.drop_pp}});
        }
        cmp["rows"] = std::move(cmp_rows);
        doc["comparison"] = std::move(cmp);
    } else {
        doc["comparison"] = nlohmann::json();
    }
    return doc;
}

DriftProfileDocument drift_document_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw validation_error("drift artifact must be a JSON object");
    expect_kind(doc, "drift-profile");
    DriftProfileDocument drift;
    const nlohmann::json& endpoint = need_object(doc, "endpoint");
    drift.endpoint_url = need_string(endpoint, "base_url");
    drift.temperature = need_number(endpoint, "temperature");
    drift.corpus_digest = need_string(need_object(doc, "inputs"), "corpus");
    for (const nlohmann::json& entry : need_array(doc, "labels")) {
        ClassLabel label;
        label.index = static_cast<int>(need_integer(entry, "index"));
        label.name = need_string(entry, "name");
        drift.labels.push_back(std::move(label));
    }
    const std::vector<int> case_ids = need_int_vector(doc, "case_ids");
    std::vector<std::string> canonical;
    for (const Register reg : all_registers()) canonical.push_back(register_key(reg));
    if (need_string_vector(doc, "registers") != canonical)
        throw validation_error("drift artifact registers must be the canonical set in order");
    for (const nlohmann::json& entry : need_array(doc, "models")) {
        DriftProfile profile;
        profile.model_name = need_string(entry, "model");
        profile.case_ids = case_ids;
        profile.case_count = static_cast<int>(case_ids.size());
        const nlohmann::json& summaries = need_object(entry, "summaries");
        for (const Register reg : all_registers()) {
            const nlohmann::json& s = need_object(summaries, register_key(reg).c_str());
            RegisterSummary summary;
            summary.reg = reg;
            summary.correct_count = static_cast<int>(need_integer(s, "correct_count"));
            summary.consistent_count = static_cast<int>(need_integer(s, "consistent_count"));
            summary.accuracy = need_number(s, "accuracy");
            summary.consistency = need_number(s, "consistency");
            profile.registers.push_back(summary);
        }
        for (const nlohmann::json& o : need_array(entry, "outcomes")) {
            CaseOutcome outcome;
            outcome.case_id = static_cast<int>(need_integer(o, "case_id"));
            outcome.reg = register_from_key(need_string(o, "register"));
            const nlohmann::json& parsed = need(o, "parsed");
            if (!parsed.is_null()) {
                if (!parsed.is_string())
                    throw validation_error("artifact key 'parsed' must be a string or null");
                const std::string name = parsed.get<std::string>();
                for (const ClassLabel& label : drift.labels)
                    if (label.name == name) {
                        outcome.parsed = label;
                        break;
                    }
                if (!outcome.parsed)
                    throw validation_error("outcome parsed to '" + name +
                                           "', which is not in the label set");
            }
            outcome.correct = need_bool(o, "correct");
            const nlohmann::json& consistent = need(o, "consistent_with_english");
            if (!consistent.is_null()) {
                if (!consistent.is_boolean())
                    throw validation_error(
                        "artifact key 'consistent_with_english' must be a boolean or null");
                outcome.consistent_with_english = consistent.get<bool>();
            }
            outcome.attempt_count = static_cast<int>(need_integer(o, "attempts"));
            outcome.raw_response = need_string(o, "raw_response");
            profile.outcomes.push_back(std::move(outcome));
        }
        profile.flip_cases = need_int_vector(entry, "flip_cases");
        verify_profile_consistency(profile);
        drift.profiles.push_back(std::move(profile));
    }
    if (drift.profiles.empty()) throw validation_error("drift artifact has no model profiles");
    const nlohmann::json& stored = need(doc, "comparison");
    if (drift.profiles.size() >= 2) {
        if (!stored.is_object())
            throw validation_error("drift artifact for several models must carry a comparison");
        ModelComparison computed = compare_models(drift.profiles);
        if (need_string_vector(stored, "model_names") != computed.model_names)
            throw validation_error(
                "drift comparison model names cannot be reproduced from the profiles");
        const nlohmann::json& rows = need_array(stored, "rows");
        if (rows.size() != computed.rows.size())
            throw validation_error("drift comparison has the wrong number of register rows");
        for (std::size_t i = 0; i < computed.rows.size(); ++i) {
            const nlohmann::json& row = rows[i];
            const ModelComparison::Row& c = computed.rows[i];
            if (need_string(row, "register") != register_key(c.reg) ||
                need_number_vector(row, "accuracy") != c.accuracy ||
                need_number_vector(row, "consistency") != c.consistency ||
                need_number_vector(row, "drop_pp") != c.drop_pp)
                throw validation_error(
                    "drift comparison cannot be reproduced from its profiles");
        }
        drift.comparison = std::move(computed);
    } else if (!stored.is_null()) {
        throw validation_error("drift comparison present for a single-model document");
    }
    drift.check_invariants();
    return drift;
}

std::vector<std::string> emit_audit_bundle(const RobustnessMap* map,
                                           const DriftProfileDocument* drift,
                                           const std::string& out_dir,
                                           const BundleOptions& opts) {
    if (!map && !drift)
        throw validation_error("audit bundle needs a robustness map or a drift document");
    if (opts.generated_at.empty())
        throw validation_error("audit bundle needs a generation timestamp");
    if (map) map->check_invariants();
    if (drift) drift->check_invariants();
    ensure_directory(out_dir);
    std::vector<std::string> written;
    if (map) {
        const std::string map_path = join_path(out_dir, "robustness_map.json");
        write_json_artifact(map_path, robustness_map_to_json(*map, opts.generated_at));
        written.push_back(map_path);
        const std::string csv_path = join_path(out_dir, "robustness_decay.csv");
        emit_decay_csv(map->sweep, csv_path, opts.csv_rates);
        written.push_back(csv_path);
    }
    if (drift) {
        const std::string drift_path = join_path(out_dir, "drift_profile.json");
        write_json_artifact(drift_path, drift_document_to_json(*drift, opts.generated_at));
        written.push_back(drift_path);
    }
    const std::string summary_path = join_path(out_dir, "summary.txt");
    write_text_file(summary_path, format_summary(map, drift, opts.generated_at));
    written.push_back(summary_path);
    return written;
}

nlohmann::json read_json_artifact(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw validation_error("'" + path + "' is not valid JSON: " + std::string(e.what()));
    }
}

void write_json_artifact(const std::string& path, const nlohmann::json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace audit
