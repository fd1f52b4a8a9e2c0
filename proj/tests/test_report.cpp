#include <doctest.h>

#include "auditkit/data.hpp"
#include "auditkit/errors.hpp"
#include "auditkit/report.hpp"
#include "auditkit/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "testutil.hpp"

using namespace audit;

namespace {

std::string data_path(const std::string& rel) {
    return std::string(AUDITKIT_DATA_DIR) + "/" + rel;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int occurrences(const std::string& hay, const std::string& needle) {
    int n = 0;
    for (std::size_t at = hay.find(needle); at != std::string::npos;
         at = hay.find(needle, at + needle.size()))
        ++n;
    return n;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

// Just enough of an XML well-formedness check for the figures this suite
// generates: matched tags, balanced attribute quotes, escaped ampersands.
// Returns an empty string when the document scans clean.
std::string xml_error(const std::string& s) {
    if (s.rfind("<?xml", 0) != 0) return "missing xml declaration";
    std::size_t i = s.find("?>");
    if (i == std::string::npos) return "unterminated xml declaration";
    i += 2;
    std::vector<std::string> stack;
    while (i < s.size()) {
        if (s[i] != '<') {
            if (s[i] == '&') {
                static const char* entities[] = {"&amp;", "&lt;", "&gt;", "&quot;", "&apos;"};
                bool known = false;
                for (const char* e : entities)
                    if (s.compare(i, std::strlen(e), e) == 0) known = true;
                if (!known) return "raw ampersand at offset " + std::to_string(i);
            }
            ++i;
            continue;
        }
        if (s.compare(i, 4, "<!--") == 0) {
            i = s.find("-->", i);
            if (i == std::string::npos) return "unterminated comment";
            i += 3;
            continue;
        }
        const std::size_t close = s.find('>', i);
        if (close == std::string::npos) return "unterminated tag";
        std::string tag = s.substr(i + 1, close - i - 1);
        if (std::count(tag.begin(), tag.end(), '"') % 2 != 0)
            return "unbalanced quotes in <" + tag.substr(0, 32) + ">";
        if (!tag.empty() && tag[0] == '/') {
            const std::string name = tag.substr(1);
            if (stack.empty() || stack.back() != name) return "mismatched </" + name + ">";
            stack.pop_back();
        } else {
            const bool self_closing = !tag.empty() && tag.back() == '/';
            if (self_closing) tag.pop_back();
            const std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
            if (name.empty()) return "empty tag name";
            if (!self_closing) stack.push_back(name);
        }
        i = close + 1;
    }
    if (!stack.empty()) return "unclosed <" + stack.back() + ">";
    return "";
}

const CorpusManifest& corpus() {
    static const CorpusManifest c = load_corpus(data_path("sample_corpus.json"));
    return c;
}

const DriftProfile& llama_profile() {
    static const DriftProfile p = [] {
        FixtureClient client = FixtureClient::load(data_path("fixtures/llama_table3.json"));
        return run_drift_audit(client, corpus());
    }();
    return p;
}

const DriftProfile& natlas_profile() {
    static const DriftProfile p = [] {
        FixtureClient client = FixtureClient::load(data_path("fixtures/natlas_table3.json"));
        return run_drift_audit(client, corpus());
    }();
    return p;
}

const MicroDenseNet& tiny_model() {
    static const MicroDenseNet m = [] {
        MicroDenseNetConfig cfg;
        cfg.in_channels = 1;
        cfg.image_size = 16;
        cfg.num_classes = 3;
        cfg.stem_channels = 4;
        cfg.blocks = 1;
        cfg.layers_per_block = 1;
        cfg.growth = 2;
        return make_model<float>(cfg, NormalizationStats::grayscale(), 7);
    }();
    return m;
}

SweepRow row_from_counts(double epsilon, const std::array<std::array<int, 3>, 3>& counts) {
    ConfusionMatrix cm(3);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) cm.at(t, p) = counts[t][p];
    SweepRow row;
    row.epsilon = epsilon;
    row.accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(cm.total());
    for (int c = 0; c < 3; ++c)
        row.per_class_accuracy.push_back(static_cast<double>(cm.at(c, c)) /
                                         static_cast<double>(cm.row_sum(c)));
    const ProportionCI ci =
        wilson_interval(static_cast<int>(cm.diagonal()), static_cast<int>(cm.total()));
    row.ci_lower = ci.lower;
    row.ci_upper = ci.upper;
    row.confusion = cm;
    return row;
}

// Fifteen rows over the standard grid, N=150 per row, accuracy falling
// from 0.98 and first dipping below one half at level 7.
SweepResult synthetic_sweep() {
    SweepResult sweep;
    sweep.ci_method = CIMethod::wilson;
    const EpsilonGrid grid = epsilon_grid();
    for (int i = 0; i < 15; ++i) {
        const int c0 = std::max(49 - 4 * i, 2);
        const int c1 = std::max(50 - 3 * i, 4);
        const int c2 = std::max(48 - 5 * i, 1);
        std::array<std::array<int, 3>, 3> counts{};
        counts[0] = {c0, 50 - c0, 0};
        counts[1] = {0, c1, 50 - c1};
        counts[2] = {50 - c2, 0, c2};
        sweep.rows.push_back(row_from_counts(grid.levels[i], counts));
    }
    return sweep;
}

MitigationReport synthetic_mitigation() {
    MitigationReport report;
    report.epsilon = epsilon_grid().levels[1];
    auto add = [&](const char* cond, const char* name, double acc) {
        MitigationRow row;
        row.condition = cond;
        row.display_name = name;
        row.accuracy = acc;
        row.per_class_accuracy = {acc, acc, acc};
        report.rows.push_back(std::move(row));
    };
    add("clean", "Clean (no attack)", 0.98);
    add("adversarial-no-defense", "Adversarial - no defence", 0.62);
    add("smoothing", "Defence 1: Gaussian Smoothing", 0.44);
    add("ensemble", "Defence 2: Ensemble Voting", 0.70);
    add("adv-train", "Defence 3: Mini Adversarial Training", 0.99);
    compute_deltas(report);
    for (MitigationRow& row : report.rows)
        row.assessment = assess_condition(row.condition, row.accuracy, 0.98, 0.62);
    return report;
}

std::vector<std::string> default_class_names() {
    std::vector<std::string> names;
    for (const ClassLabel& label : default_labels()) names.push_back(label.name);
    return names;
}

const RobustnessMap& the_map() {
    static const RobustnessMap m =
        build_robustness_map(fingerprint_model(tiny_model(), 7), default_class_names(),
                             synthetic_sweep(), synthetic_mitigation());
    return m;
}

std::vector<AdversarialExample> make_examples() {
    std::vector<AdversarialExample> out;
    const std::vector<ClassLabel> labels = default_labels();
    const int clean_preds[3] = {0, 1, 2};
    const int adv_preds[3] = {1, 1, 0};
    for (int i = 0; i < 3; ++i) {
        Tensor clean = Tensor::zeros({1, 16, 16});
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                clean.data[y * 16 + x] = 0.2f + 0.05f * i + ((x + y) % 2) * 0.4f;
        Tensor adv = clean;
        for (int j = 0; j < 40; ++j) {
            const int at = (j * 7) % 256;
            adv.data[at] = std::min(1.0f, adv.data[at] + 0.1f);
        }
        AdversarialExample ex;
        ex.clean = LabeledImage{clean, labels[i], "clean-" + std::to_string(i)};
        ex.adversarial = LabeledImage{adv, labels[i], "adv-" + std::to_string(i)};
        ex.clean_prediction = clean_preds[i];
        ex.adversarial_prediction = adv_preds[i];
        out.push_back(std::move(ex));
    }
    return out;
}

const DriftProfileDocument& the_drift_doc() {
    static const DriftProfileDocument doc = build_drift_document(
        "http://127.0.0.1:11434", 0.0, corpus(), {llama_profile(), natlas_profile()});
    return doc;
}

}  // namespace

TEST_SUITE("report.hash") {
    TEST_CASE("matches the published 64-bit FNV-1a reference digests") {
        CHECK(fnv1a64(std::string{}) == 0xcbf29ce484222325ULL);
        CHECK(fnv1a64(std::string{"a"}) == 0xaf63dc4c8601ec8cULL);
        CHECK(fnv1a64(std::string{"foobar"}) == 0x85944171f73967e8ULL);
    }

    TEST_CASE("hashes bytes, not characters") {
        const char blob[] = {'\x00', '\x01', '\xff'};
        CHECK(fnv1a64(blob, 3) != fnv1a64(blob, 2));
        CHECK(fnv1a64(blob, 0) == fnv1a64(std::string{}));
    }

    TEST_CASE("hex rendering is fixed-width lower-case") {
        CHECK(hex64(0) == "0000000000000000");
        CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
        CHECK(hex64(0xcbf29ce484222325ULL) == "cbf29ce484222325");
    }
}

TEST_SUITE("report.fingerprint") {
    TEST_CASE("names the architecture from the config") {
        const ModelFingerprint fp = fingerprint_model(tiny_model(), 7);
        CHECK(fp.architecture == "micro-densenet 1x16x16 stem4 blocks1x1 growth2 classes3");
        CHECK(fp.seed == 7);
        CHECK(fp.checkpoint_hash.size() == 16);
    }

    TEST_CASE("is deterministic for the same model") {
        CHECK(fingerprint_model(tiny_model(), 7) == fingerprint_model(tiny_model(), 7));
    }

    TEST_CASE("the seed argument is metadata, not part of the weight digest") {
        const ModelFingerprint a = fingerprint_model(tiny_model(), 7);
        const ModelFingerprint b = fingerprint_model(tiny_model(), 8);
        CHECK(a.checkpoint_hash == b.checkpoint_hash);
        CHECK(b.seed == 8);
    }

    TEST_CASE("a single nudged weight changes the digest") {
        MicroDenseNet edited = tiny_model();
        edited.params[0].data[0] += 1e-3f;
        CHECK(fingerprint_model(edited, 7).checkpoint_hash !=
              fingerprint_model(tiny_model(), 7).checkpoint_hash);
    }

    TEST_CASE("renaming a label changes the digest") {
        MicroDenseNet edited = tiny_model();
        edited.labels[0].name = "Something else";
        CHECK(fingerprint_model(edited, 7).checkpoint_hash !=
              fingerprint_model(tiny_model(), 7).checkpoint_hash);
    }
}

TEST_SUITE("report.corpus_hash") {
    TEST_CASE("digests the shipped corpus stably") {
        const std::string h1 = corpus_hash(corpus());
        const std::string h2 = corpus_hash(load_corpus(data_path("sample_corpus.json")));
        CHECK(h1 == h2);
        CHECK(h1.size() == 16);
        CHECK(h1.find_first_not_of("0123456789abcdef") == std::string::npos);
    }

    TEST_CASE("any text edit changes the digest") {
        CorpusManifest edited = corpus();
        edited.cases[0].text += " x";
        CHECK(corpus_hash(edited) != corpus_hash(corpus()));
    }
}

TEST_SUITE("report.map") {
    TEST_CASE("derives baseline, collapse point and danger threshold from the sweep") {
        const RobustnessMap& map = the_map();
        CHECK(map.clean_accuracy == 0.98);
        CHECK(map.first_attack_per_class == map.sweep.rows[1].per_class_accuracy);
        REQUIRE(bool(map.danger_zone_epsilon));
        CHECK(*map.danger_zone_epsilon == epsilon_grid().levels[7]);
        CHECK(map.sweep.rows[7].accuracy < 0.5);
        CHECK(map.sweep.rows[6].accuracy >= 0.5);
    }

    TEST_CASE("danger threshold is empty when accuracy never drops that far") {
        SweepResult mild;
        mild.rows.push_back(row_from_counts(0.0, {{{48, 2, 0}, {0, 47, 3}, {1, 0, 49}}}));
        mild.rows.push_back(row_from_counts(0.1, {{{40, 10, 0}, {0, 41, 9}, {5, 0, 45}}}));
        CHECK(!danger_zone_threshold(mild));
    }

    TEST_CASE("a map with no sweep is rejected") {
        CHECK_THROWS_AS(build_robustness_map(ModelFingerprint{}, default_class_names(),
                                             SweepResult{}, synthetic_mitigation()),
                        validation_error);
        RobustnessMap empty;
        CHECK_THROWS_WITH_AS(empty.check_invariants(),
                             "robustness map has no sweep rows", validation_error);
    }

    TEST_CASE("a stored rate that disagrees with its confusion matrix is rejected") {
        RobustnessMap tampered = the_map();
        tampered.sweep.rows[1].accuracy += 0.01;
        CHECK_THROWS_AS(tampered.check_invariants(), validation_error);
        try {
            tampered.check_invariants();
        } catch (const validation_error& e) {
            CHECK(std::string(e.what()).find("confusion") != std::string::npos);
        }
    }

    TEST_CASE("class names must match the confusion dimension") {
        RobustnessMap map = the_map();
        map.class_names.pop_back();
        CHECK_THROWS_AS(map.check_invariants(), validation_error);
    }

    TEST_CASE("derived fields cannot drift from the sweep") {
        RobustnessMap map = the_map();
        map.first_attack_per_class[0] += 0.01;
        CHECK_THROWS_AS(map.check_invariants(), validation_error);

        RobustnessMap map2 = the_map();
        map2.danger_zone_epsilon.reset();
        CHECK_THROWS_AS(map2.check_invariants(), validation_error);

        RobustnessMap map3 = the_map();
        map3.clean_accuracy = 0.5;
        CHECK_THROWS_AS(map3.check_invariants(), validation_error);
    }

    TEST_CASE("sweep epsilons must increase") {
        RobustnessMap map = the_map();
        std::swap(map.sweep.rows[2], map.sweep.rows[3]);
        CHECK_THROWS_AS(map.check_invariants(), validation_error);
    }
}

TEST_SUITE("report.csv") {
    TEST_CASE("writes a header plus one line per level with a trailing newline") {
        testutil::TempDir dir;
        const std::string path = dir.file("decay.csv");
        emit_decay_csv(the_map().sweep, path);
        const std::string text = read_file(path);
        REQUIRE(!text.empty());
        CHECK(text.back() == '\n');
        const std::vector<std::string> lines = split_lines(text);
        REQUIRE(lines.size() == 16);
        CHECK(lines[0] == "epsilon,accuracy,ci_lower,ci_upper");
        CHECK(lines[1].rfind("0.000,0.9800,", 0) == 0);
    }

    TEST_CASE("fraction rows round-trip through the parser") {
        testutil::TempDir dir;
        const std::string path = dir.file("decay.csv");
        emit_decay_csv(the_map().sweep, path, RateFormat::fraction);
        const std::vector<DecayRow> parsed = parse_decay_csv(path);
        REQUIRE(parsed.size() == the_map().sweep.rows.size());
        for (std::size_t i = 0; i < parsed.size(); ++i) {
            const SweepRow& orig = the_map().sweep.rows[i];
            CHECK(std::abs(parsed[i].epsilon - orig.epsilon) <= 5.001e-4);
            CHECK(std::abs(parsed[i].accuracy - orig.accuracy) <= 5.001e-5);
            CHECK(std::abs(parsed[i].ci_lower - orig.ci_lower) <= 5.001e-5);
            CHECK(std::abs(parsed[i].ci_upper - orig.ci_upper) <= 5.001e-5);
        }
    }

    TEST_CASE("percent formatting keeps one decimal and parses on the 0-100 scale") {
        testutil::TempDir dir;
        const std::string path = dir.file("decay_pct.csv");
        emit_decay_csv(the_map().sweep, path, RateFormat::percent);
        const std::string text = read_file(path);
        CHECK(split_lines(text)[1].rfind("0.000,98.0,", 0) == 0);
        const std::vector<DecayRow> parsed = parse_decay_csv(path);
        REQUIRE(parsed.size() == 15);
        for (std::size_t i = 0; i < parsed.size(); ++i)
            CHECK(std::abs(parsed[i].accuracy - the_map().sweep.rows[i].accuracy * 100.0) <=
                  0.05001);
    }

    TEST_CASE("an empty sweep cannot be written") {
        testutil::TempDir dir;
        CHECK_THROWS_AS(emit_decay_csv(SweepResult{}, dir.file("x.csv")), validation_error);
    }

    TEST_CASE("parser rejects missing files, bad headers and bad numbers") {
        testutil::TempDir dir;
        CHECK_THROWS_AS(parse_decay_csv(dir.file("absent.csv")), io_error);

        std::ofstream(dir.file("header.csv")) << "eps,acc\n0.0,1.0\n";
        CHECK_THROWS_AS(parse_decay_csv(dir.file("header.csv")), validation_error);

        std::ofstream(dir.file("value.csv"))
            << "epsilon,accuracy,ci_lower,ci_upper\n0.000,0.98,0.94,0.99\n0.021,oops,0.5,0.7\n";
        try {
            parse_decay_csv(dir.file("value.csv"));
            FAIL("expected a validation error");
        } catch (const validation_error& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }

        std::ofstream(dir.file("short.csv"))
            << "epsilon,accuracy,ci_lower,ci_upper\n0.000,0.98\n";
        CHECK_THROWS_AS(parse_decay_csv(dir.file("short.csv")), validation_error);

        std::ofstream(dir.file("empty.csv")) << "epsilon,accuracy,ci_lower,ci_upper\n";
        CHECK_THROWS_AS(parse_decay_csv(dir.file("empty.csv")), validation_error);
    }
}

TEST_SUITE("report.tables") {
    TEST_CASE("interpretation thresholds") {
        const double chance = 1.0 / 3.0;
        CHECK(sweep_interpretation(0.0, 0.9, 0.9, chance) == "Clean baseline");
        CHECK(sweep_interpretation(0.021, 0.38, 0.9, chance) == "Effectively random");
        CHECK(sweep_interpretation(0.021, 0.45, 0.9, chance) == "Danger zone - below 50%");
        CHECK(sweep_interpretation(0.021, 0.75, 0.9, chance) == "Clinically dangerous drop");
        CHECK(sweep_interpretation(0.021, 0.85, 0.9, chance) == "Within tolerance");
    }

    TEST_CASE("sweep table walks the interpretation scale as accuracy decays") {
        const std::string table = format_sweep_table(the_map().sweep);
        CHECK(table.find("Epsilon") != std::string::npos);
        CHECK(table.find("Accuracy (%)") != std::string::npos);
        CHECK(table.find("95% CI Lower (%)") != std::string::npos);
        CHECK(table.find("Clinical Interpretation") != std::string::npos);
        CHECK(table.find("Clean baseline") != std::string::npos);
        CHECK(table.find("Within tolerance") != std::string::npos);
        CHECK(table.find("Clinically dangerous drop") != std::string::npos);
        CHECK(table.find("Danger zone - below 50%") != std::string::npos);
        CHECK(table.find("Effectively random") != std::string::npos);
        CHECK(table.find("0.000") != std::string::npos);
        CHECK(table.find("98.0") != std::string::npos);
    }

    TEST_CASE("mitigation deltas print to one decimal from the machine fields") {
        MitigationReport report;
        report.epsilon = epsilon_grid().levels[1];
        auto add = [&](const char* cond, const char* name, double acc) {
            MitigationRow row;
            row.condition = cond;
            row.display_name = name;
            row.accuracy = acc;
            row.per_class_accuracy = {acc, acc, acc};
            report.rows.push_back(std::move(row));
        };
        add("clean", "Clean (no attack)", 0.893);
        add("adversarial-no-defense", "Adversarial - no defence", 0.613);
        add("smoothing", "Defence 1: Gaussian Smoothing", 0.347);
        add("ensemble", "Defence 2: Ensemble Voting", 0.727);
        compute_deltas(report);
        for (MitigationRow& row : report.rows)
            row.assessment = assess_condition(row.condition, row.accuracy, 0.893, 0.613);

        const std::string table = format_mitigation_table(report);
        CHECK(table.find("-28.0%") != std::string::npos);
        CHECK(table.find("-54.6%") != std::string::npos);
        CHECK(table.find("-16.6%") != std::string::npos);
        CHECK(table.find("89.3") != std::string::npos);
        CHECK(table.find("61.3") != std::string::npos);
        CHECK(table.find("34.7") != std::string::npos);
        CHECK(table.find("72.7") != std::string::npos);
        CHECK(table.find("Clinically dangerous") != std::string::npos);
        CHECK(table.find("Worse than no defence") != std::string::npos);
        CHECK(table.find("Partial recovery - insufficient") != std::string::npos);
        CHECK(table.find("+") == std::string::npos);

        for (const std::string& line : split_lines(table)) {
            if (line.find("Clean (no attack)") == std::string::npos) continue;
            CHECK(line.find("Acceptable") != std::string::npos);
            CHECK(line.find('%') == std::string::npos);
        }
    }

    TEST_CASE("a recovered defense prints a plus delta") {
        const std::string table = format_mitigation_table(the_map().mitigation);
        CHECK(table.find("+1.0%") != std::string::npos);
        CHECK(table.find("Full recovery") != std::string::npos);
    }

    TEST_CASE("drift table lays out accuracy and consistency per model") {
        const std::string table = format_drift_table({llama_profile(), natlas_profile()});
        CHECK(table.find("Language Register") != std::string::npos);
        CHECK(table.find("llama3.1:8b Accuracy") != std::string::npos);
        CHECK(table.find("natlas:latest Accuracy") != std::string::npos);
        CHECK(table.find("llama3.1:8b Consistency") != std::string::npos);
        CHECK(table.find("natlas:latest Consistency") != std::string::npos);
        CHECK(table.find("Standard English") != std::string::npos);
        CHECK(table.find("Nigerian Pidgin") != std::string::npos);
        CHECK(table.find("Yoruba-inflected English") != std::string::npos);
        CHECK(table.find("80.0%") != std::string::npos);
        CHECK(table.find("65.0%") != std::string::npos);
        CHECK(table.find("60.0%") != std::string::npos);
        CHECK(table.find("85.0%") != std::string::npos);
        CHECK(table.find("55.0%") != std::string::npos);
        CHECK(table.find("75.0%") != std::string::npos);
        CHECK(occurrences(table, "100%") == 2);
        CHECK(table.find("85%") != std::string::npos);
        CHECK(table.find("50%") != std::string::npos);
        CHECK(table.find("60%") != std::string::npos);
    }
}

TEST_SUITE("report.drift_document") {
    TEST_CASE("bundles endpoint, corpus digest, profiles and the comparison") {
        const DriftProfileDocument& doc = the_drift_doc();
        CHECK(doc.endpoint_url == "http://127.0.0.1:11434");
        CHECK(doc.corpus_digest == corpus_hash(corpus()));
        REQUIRE(doc.profiles.size() == 2);
        REQUIRE(bool(doc.comparison));
        CHECK(doc.comparison->model_names ==
              std::vector<std::string>{"llama3.1:8b", "natlas:latest"});
    }

    TEST_CASE("a single model gets no comparison") {
        const DriftProfileDocument doc =
            build_drift_document("http://127.0.0.1:11434", 0.0, corpus(), {llama_profile()});
        CHECK(!doc.comparison);
        doc.check_invariants();
    }

    TEST_CASE("no profiles is an error") {
        CHECK_THROWS_AS(build_drift_document("http://127.0.0.1:11434", 0.0, corpus(), {}),
                        validation_error);
    }

    TEST_CASE("a profile scored over different cases is rejected") {
        DriftProfile trimmed = llama_profile();
        trimmed.case_ids.pop_back();
        trimmed.case_count -= 1;
        CHECK_THROWS_AS(
            build_drift_document("http://127.0.0.1:11434", 0.0, corpus(), {trimmed}),
            validation_error);
    }

    TEST_CASE("invariants catch a missing or disordered comparison") {
        DriftProfileDocument doc = the_drift_doc();
        doc.comparison.reset();
        CHECK_THROWS_AS(doc.check_invariants(), validation_error);

        DriftProfileDocument doc2 = the_drift_doc();
        std::swap(doc2.profiles[0], doc2.profiles[1]);
        CHECK_THROWS_AS(doc2.check_invariants(), validation_error);
    }
}

TEST_SUITE("report.figures") {
    TEST_CASE("decay chart carries the full sweep, the band and both reference lines") {
        testutil::TempDir dir;
        const std::vector<std::string> paths =
            emit_robustness_figures(the_map(), make_examples(), dir.file("figs"));
        REQUIRE(paths.size() == 4);
        CHECK(paths[0].find("robustness_decay.svg") != std::string::npos);
        const std::string svg = read_file(paths[0]);
        CHECK(xml_error(svg) == "");
        CHECK(occurrences(svg, "class=\"data-point\"") == 15);
        CHECK(occurrences(svg, "class=\"reference-line\"") == 2);
        CHECK(occurrences(svg, "class=\"ci-band\"") == 1);
        CHECK(occurrences(svg, "class=\"decay-line\"") == 1);
        CHECK(svg.find("epsilon (fraction of intensity range)") != std::string::npos);
        CHECK(svg.find("clean 98.0%") != std::string::npos);
        CHECK(svg.find("chance 33.3%") != std::string::npos);
    }

    TEST_CASE("per-class chart draws a clean and an attacked bar per class") {
        testutil::TempDir dir;
        const auto paths = emit_robustness_figures(the_map(), {}, dir.file("figs"));
        REQUIRE(paths.size() == 3);
        const std::string svg = read_file(paths[1]);
        CHECK(xml_error(svg) == "");
        CHECK(occurrences(svg, "class=\"class-bar\"") == 6);
        CHECK(svg.find("COVID-19") != std::string::npos);
        CHECK(svg.find("Non-COVID Pneumonia") != std::string::npos);
        CHECK(svg.find("Normal") != std::string::npos);
    }

    TEST_CASE("mitigation chart shades the danger zone under the bars") {
        testutil::TempDir dir;
        const auto paths = emit_robustness_figures(the_map(), {}, dir.file("figs"));
        const std::string svg = read_file(paths[2]);
        CHECK(xml_error(svg) == "");
        CHECK(occurrences(svg, "class=\"mitigation-bar\"") == 5);
        CHECK(occurrences(svg, "class=\"danger-zone\"") == 1);
        CHECK(svg.find("danger zone: below 50%") != std::string::npos);
        CHECK(svg.find("Defence 2: Ensemble Voting") != std::string::npos);
    }

    TEST_CASE("triptych renders three pixel panels per example") {
        testutil::TempDir dir;
        const auto paths = emit_robustness_figures(the_map(), make_examples(), dir.file("figs"));
        const std::string svg = read_file(paths[3]);
        CHECK(xml_error(svg) == "");
        CHECK(occurrences(svg, "<g class=\"panel\">") == 9);
        CHECK(occurrences(svg, "class=\"pixel\"") == 9 * 16 * 16);
        CHECK(svg.find("Perturbation x10") != std::string::npos);
        CHECK(svg.find("model: ") != std::string::npos);
    }

    TEST_CASE("figures are byte-identical across runs") {
        testutil::TempDir dir;
        const auto first = emit_robustness_figures(the_map(), make_examples(), dir.file("a"));
        const auto second = emit_robustness_figures(the_map(), make_examples(), dir.file("b"));
        REQUIRE(first.size() == second.size());
        for (std::size_t i = 0; i < first.size(); ++i)
            CHECK(read_file(first[i]) == read_file(second[i]));
    }

    TEST_CASE("heatmaps paint one cell per case and register") {
        testutil::TempDir dir;
        const auto paths =
            emit_drift_figures({llama_profile(), natlas_profile()}, dir.file("figs"));
        REQUIRE(paths.size() == 2);
        CHECK(paths[0].find("drift_heatmap_llama3-1-8b.svg") != std::string::npos);
        CHECK(paths[1].find("drift_heatmap_natlas-latest.svg") != std::string::npos);

        const std::string llama = read_file(paths[0]);
        CHECK(xml_error(llama) == "");
        CHECK(occurrences(llama, "class=\"heatmap-cell\"") == 60);
        CHECK(occurrences(llama, "fill=\"#2e7d32\" class=\"heatmap-cell\"") == 41);
        CHECK(occurrences(llama, "fill=\"#c62828\" class=\"heatmap-cell\"") == 19);
        CHECK(llama.find("llama3.1:8b - per-case outcomes by register") != std::string::npos);

        const std::string natlas = read_file(paths[1]);
        CHECK(occurrences(natlas, "class=\"heatmap-cell\"") == 60);
        CHECK(occurrences(natlas, "fill=\"#2e7d32\" class=\"heatmap-cell\"") == 43);
        CHECK(occurrences(natlas, "fill=\"#c62828\" class=\"heatmap-cell\"") == 17);
    }

    TEST_CASE("no profiles, no heatmaps") {
        testutil::TempDir dir;
        CHECK(emit_drift_figures({}, dir.file("figs")).empty());
    }

    TEST_CASE("prediction indices outside the class range are rejected") {
        testutil::TempDir dir;
        std::vector<AdversarialExample> bad = make_examples();
        bad[0].adversarial_prediction = 3;
        CHECK_THROWS_AS(emit_robustness_figures(the_map(), bad, dir.file("figs")),
                        validation_error);
    }
}

TEST_SUITE("report.bundle") {
    TEST_CASE("writes map json, decay csv, drift json and the summary") {
        testutil::TempDir dir;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";
        const std::vector<std::string> paths =
            emit_audit_bundle(&the_map(), &the_drift_doc(), dir.file("bundle"), opts);
        REQUIRE(paths.size() == 4);
        CHECK(paths[0].find("robustness_map.json") != std::string::npos);
        CHECK(paths[1].find("robustness_decay.csv") != std::string::npos);
        CHECK(paths[2].find("drift_profile.json") != std::string::npos);
        CHECK(paths[3].find("summary.txt") != std::string::npos);

        const nlohmann::json map_doc = read_json_artifact(paths[0]);
        CHECK(map_doc.at("schema_version") == "1");
        CHECK(map_doc.at("kind") == "robustness-map");
        CHECK(map_doc.at("generated_at") == "2026-01-01T00:00:00Z");
        CHECK(map_doc.at("inputs").at("checkpoint") == the_map().fingerprint.checkpoint_hash);
        CHECK(map_doc.at("model").at("seed") == 7);
        CHECK(map_doc.at("sweep").size() == 15);
        CHECK(map_doc.at("sweep")[0].at("accuracy").get<double>() == the_map().clean_accuracy);
        CHECK(map_doc.at("danger_zone_epsilon").get<double>() ==
              *the_map().danger_zone_epsilon);
        CHECK(map_doc.at("mitigation").at("rows").size() == 5);

        const nlohmann::json drift_doc = read_json_artifact(paths[2]);
        CHECK(drift_doc.at("schema_version") == "1");
        CHECK(drift_doc.at("kind") == "drift-profile");
        CHECK(drift_doc.at("inputs").at("corpus") == the_drift_doc().corpus_digest);
        REQUIRE(drift_doc.at("models").size() == 2);
        const nlohmann::json& llama = drift_doc.at("models")[0];
        CHECK(llama.at("model") == "llama3.1:8b");
        CHECK(llama.at("summaries").at("english").at("accuracy").get<double>() == 0.80);
        CHECK(llama.at("summaries").at("pidgin").at("consistency").get<double>() == 0.85);
        CHECK(llama.at("flip_cases") == nlohmann::json({2, 5, 7, 13, 19}));
        CHECK(llama.at("outcomes").size() == 60);
        REQUIRE(!drift_doc.at("comparison").is_null());
        const nlohmann::json& rows = drift_doc.at("comparison").at("rows");
        REQUIRE(rows.size() == 3);
        CHECK(rows[1].at("register") == "pidgin");
        CHECK(rows[1].at("drop_pp")[1].get<double>() == doctest::Approx(-30.0).epsilon(1e-9));
    }

    TEST_CASE("a pinned timestamp reproduces every artifact byte for byte") {
        testutil::TempDir dir;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";
        const auto first = emit_audit_bundle(&the_map(), &the_drift_doc(), dir.file("a"), opts);
        const auto second = emit_audit_bundle(&the_map(), &the_drift_doc(), dir.file("b"), opts);
        REQUIRE(first.size() == second.size());
        for (std::size_t i = 0; i < first.size(); ++i)
            CHECK(read_file(first[i]) == read_file(second[i]));

        BundleOptions other = opts;
        other.generated_at = "2026-01-02T00:00:00Z";
        const auto third = emit_audit_bundle(&the_map(), &the_drift_doc(), dir.file("c"), other);
        CHECK(read_file(first[0]) != read_file(third[0]));
    }

    TEST_CASE("summary numbers come from the machine fields") {
        testutil::TempDir dir;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";
        const auto paths = emit_audit_bundle(&the_map(), &the_drift_doc(), dir.file("x"), opts);
        const std::string summary = read_file(paths[3]);
        const nlohmann::json map_doc = read_json_artifact(paths[0]);

        CHECK(summary.find("Generated at:   2026-01-01T00:00:00Z") != std::string::npos);
        CHECK(summary.find("Schema version: 1") != std::string::npos);
        CHECK(summary.find("Clean accuracy:  98.0%") != std::string::npos);
        CHECK(summary.find("at epsilon 0.150") != std::string::npos);
        CHECK(summary.find("Per-class accuracy at epsilon 0.021:") != std::string::npos);
        CHECK(summary.find("Mitigation stress test at epsilon 0.021") != std::string::npos);
        CHECK(summary.find("Checkpoint hash: " + the_map().fingerprint.checkpoint_hash) !=
              std::string::npos);
        CHECK(summary.find("Corpus hash: " + the_drift_doc().corpus_digest) !=
              std::string::npos);

        for (const std::size_t i : {std::size_t{0}, std::size_t{1}, std::size_t{7}}) {
            const nlohmann::json& row = map_doc.at("sweep")[i];
            char acc[16], eps[16];
            std::snprintf(acc, sizeof acc, "%.1f", row.at("accuracy").get<double>() * 100.0);
            std::snprintf(eps, sizeof eps, "%.3f", row.at("epsilon").get<double>());
            CHECK(summary.find(eps) != std::string::npos);
            CHECK(summary.find(acc) != std::string::npos);
        }

        const std::vector<DecayRow> csv_rows = parse_decay_csv(paths[1]);
        REQUIRE(csv_rows.size() == map_doc.at("sweep").size());
        for (std::size_t i = 0; i < csv_rows.size(); ++i)
            CHECK(std::abs(csv_rows[i].accuracy -
                           map_doc.at("sweep")[i].at("accuracy").get<double>()) <= 5.001e-5);

        CHECK(summary.find("80.0%") != std::string::npos);
        CHECK(summary.find("55.0%") != std::string::npos);
        CHECK(summary.find("Flip cases - llama3.1:8b: 2, 5, 7, 13, 19") != std::string::npos);
        CHECK(summary.find("Flip cases - natlas:latest: 1, 2, 3, 4, 5, 6, 8, 9, 10, 12, 13, "
                           "15, 16, 17, 19") != std::string::npos);
    }

    TEST_CASE("halves can be omitted but not both") {
        testutil::TempDir dir;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";

        const auto map_only = emit_audit_bundle(&the_map(), nullptr, dir.file("m"), opts);
        CHECK(map_only.size() == 3);
        CHECK(read_file(map_only.back()).find("Language drift") == std::string::npos);

        const auto drift_only = emit_audit_bundle(nullptr, &the_drift_doc(), dir.file("d"), opts);
        CHECK(drift_only.size() == 2);
        const std::string summary = read_file(drift_only.back());
        CHECK(summary.find("Adversarial robustness") == std::string::npos);
        CHECK(summary.find("Language drift") != std::string::npos);

        CHECK_THROWS_AS(emit_audit_bundle(nullptr, nullptr, dir.file("n"), opts),
                        validation_error);
    }

    TEST_CASE("an unpinned timestamp or a sweepless map is rejected") {
        testutil::TempDir dir;
        BundleOptions blank;
        CHECK_THROWS_AS(emit_audit_bundle(&the_map(), nullptr, dir.file("t"), blank),
                        validation_error);

        RobustnessMap hollow;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";
        try {
            emit_audit_bundle(&hollow, nullptr, dir.file("h"), opts);
            FAIL("expected a validation error");
        } catch (const validation_error& e) {
            CHECK(std::string(e.what()).find("sweep") != std::string::npos);
        }
    }
}

TEST_SUITE("report.json_io") {
    TEST_CASE("artifacts round-trip byte for byte") {
        testutil::TempDir dir;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";
        const auto paths = emit_audit_bundle(&the_map(), &the_drift_doc(), dir.file("x"), opts);
        for (const std::string& json_path : {paths[0], paths[2]}) {
            const nlohmann::json doc = read_json_artifact(json_path);
            const std::string copy = json_path + ".copy";
            write_json_artifact(copy, doc);
            CHECK(read_file(copy) == read_file(json_path));
        }
    }

    TEST_CASE("fields this version does not know survive a rewrite") {
        testutil::TempDir dir;
        BundleOptions opts;
        opts.generated_at = "2026-01-01T00:00:00Z";
        const auto paths = emit_audit_bundle(&the_map(), nullptr, dir.file("x"), opts);
        nlohmann::json doc = read_json_artifact(paths[0]);
        doc["zz_extension"] = {{"added_by", "a future version"}};
        const std::string rewritten = dir.file("rewritten.json");
        write_json_artifact(rewritten, doc);
        const nlohmann::json back = read_json_artifact(rewritten);
        CHECK(back == doc);
        CHECK(back.contains("zz_extension"));
        CHECK(back.at("sweep").size() == 15);
    }

    TEST_CASE("missing and malformed files fail loudly") {
        testutil::TempDir dir;
        CHECK_THROWS_AS(read_json_artifact(dir.file("absent.json")), io_error);
        std::ofstream(dir.file("broken.json")) << "{]";
        CHECK_THROWS_AS(read_json_artifact(dir.file("broken.json")), validation_error);
    }
}

namespace {

template <typename Fn>
std::string validation_message(Fn&& fn) {
    try {
        fn();
    } catch (const validation_error& e) {
        return e.what();
    }
    return "(no validation error was thrown)";
}

}  // namespace

TEST_SUITE("report.serialization") {
    TEST_CASE("sweep survives the json round trip byte for byte") {
        const SweepResult sweep = synthetic_sweep();
        const nlohmann::json doc = sweep_to_json(sweep);
        CHECK(doc.at("kind") == "sweep");
        CHECK(doc.at("ci_method") == "wilson");
        const SweepResult back = sweep_from_json(doc);
        CHECK(back.ci_method == sweep.ci_method);
        REQUIRE(back.rows.size() == sweep.rows.size());
        CHECK(back.rows[7].epsilon == sweep.rows[7].epsilon);
        CHECK(back.rows[7].confusion.counts == sweep.rows[7].confusion.counts);
        CHECK(sweep_to_json(back).dump() == doc.dump());
    }

    TEST_CASE("sweep rows are cross-checked against their confusion counts") {
        nlohmann::json doc = sweep_to_json(synthetic_sweep());
        doc["rows"][3]["accuracy"] = doc["rows"][3]["accuracy"].get<double>() + 0.001;
        CHECK(validation_message([&] { sweep_from_json(doc); }).find("confusion") !=
              std::string::npos);
        nlohmann::json inverted = sweep_to_json(synthetic_sweep());
        inverted["rows"][3]["accuracy"] = 0.9;
        CHECK(validation_message([&] { sweep_from_json(inverted); }).find("interval") !=
              std::string::npos);
    }

    TEST_CASE("sweep shape errors name the offending key") {
        nlohmann::json doc = sweep_to_json(synthetic_sweep());
        doc.erase("ci_method");
        CHECK(validation_message([&] { sweep_from_json(doc); }).find("ci_method") !=
              std::string::npos);
        nlohmann::json stalled = sweep_to_json(synthetic_sweep());
        stalled["rows"][2]["epsilon"] = stalled["rows"][1]["epsilon"];
        CHECK(validation_message([&] { sweep_from_json(stalled); }).find("increase strictly") !=
              std::string::npos);
        CHECK_THROWS_AS(sweep_from_json(nlohmann::json::array()), validation_error);
    }

    TEST_CASE("mitigation survives the json round trip") {
        const MitigationReport report = synthetic_mitigation();
        const nlohmann::json doc = mitigation_to_json(report);
        const MitigationReport back = mitigation_from_json(doc);
        REQUIRE(back.rows.size() == report.rows.size());
        CHECK(back.epsilon == report.epsilon);
        CHECK(back.row("adv-train").assessment == report.row("adv-train").assessment);
        CHECK(mitigation_to_json(back).dump() == doc.dump());
    }

    TEST_CASE("mitigation deltas must follow from the clean baseline") {
        nlohmann::json doc = mitigation_to_json(synthetic_mitigation());
        doc["rows"][2]["delta_vs_clean"] = -0.5;
        CHECK(validation_message([&] { mitigation_from_json(doc); }).find("clean baseline") !=
              std::string::npos);
        nlohmann::json headless = mitigation_to_json(synthetic_mitigation());
        headless["rows"][0]["condition"] = "baseline";
        CHECK(validation_message([&] { mitigation_from_json(headless); })
                  .find("clean baseline row") != std::string::npos);
    }

    TEST_CASE("a wrong artifact kind is rejected up front") {
        const nlohmann::json doc = sweep_to_json(synthetic_sweep());
        CHECK(validation_message([&] { mitigation_from_json(doc); })
                  .find("expected 'mitigation'") != std::string::npos);
    }

    TEST_CASE("the robustness map survives the json round trip") {
        const RobustnessMap& map = the_map();
        const nlohmann::json doc = robustness_map_to_json(map, "2026-01-01T00:00:00Z");
        const RobustnessMap back = robustness_map_from_json(doc);
        CHECK(back.fingerprint == map.fingerprint);
        CHECK(back.clean_accuracy == map.clean_accuracy);
        CHECK(back.danger_zone_epsilon == map.danger_zone_epsilon);
        CHECK(back.class_names == map.class_names);
        CHECK(robustness_map_to_json(back, "2026-01-01T00:00:00Z").dump() == doc.dump());
    }

    TEST_CASE("map documents with inconsistent stored fields are rejected") {
        nlohmann::json doc = robustness_map_to_json(the_map(), "T");
        doc["clean_accuracy"] = 0.5;
        CHECK_THROWS_AS(robustness_map_from_json(doc), validation_error);
        nlohmann::json forged = robustness_map_to_json(the_map(), "T");
        forged["inputs"]["checkpoint"] = "deadbeefdeadbeef";
        CHECK(validation_message([&] { robustness_map_from_json(forged); }).find("fingerprint") !=
              std::string::npos);
    }

    TEST_CASE("the drift document survives the json round trip") {
        const DriftProfileDocument& drift = the_drift_doc();
        const nlohmann::json doc = drift_document_to_json(drift, "2026-01-01T00:00:00Z");
        REQUIRE(doc.at("labels").size() == 3);
        const DriftProfileDocument back = drift_document_from_json(doc);
        REQUIRE(back.profiles.size() == 2);
        CHECK(back.endpoint_url == drift.endpoint_url);
        CHECK(back.corpus_digest == drift.corpus_digest);
        CHECK(back.profiles[0].flip_cases == drift.profiles[0].flip_cases);
        REQUIRE(back.comparison.has_value());
        CHECK(back.comparison->model_names == drift.comparison->model_names);
        CHECK(drift_document_to_json(back, "2026-01-01T00:00:00Z").dump() == doc.dump());
    }

    TEST_CASE("drift tallies, flags, flips and comparisons are re-derived on load") {
        const nlohmann::json doc = drift_document_to_json(the_drift_doc(), "T");

        nlohmann::json clipped = doc;
        clipped["models"][0]["flip_cases"] = std::vector<int>{2, 5, 7, 13};
        CHECK(validation_message([&] { drift_document_from_json(clipped); }).find("flip cases") !=
              std::string::npos);

        nlohmann::json inflated = doc;
        inflated["models"][0]["summaries"]["english"]["accuracy"] = 0.95;
        CHECK(validation_message([&] { drift_document_from_json(inflated); })
                  .find("cannot be reproduced") != std::string::npos);

        nlohmann::json flipped = doc;
        const bool was = flipped["models"][0]["outcomes"][1]["consistent_with_english"];
        flipped["models"][0]["outcomes"][1]["consistent_with_english"] = !was;
        CHECK(validation_message([&] { drift_document_from_json(flipped); })
                  .find("consistency flags") != std::string::npos);

        nlohmann::json skewed = doc;
        skewed["comparison"]["rows"][1]["drop_pp"][1] = -31.0;
        CHECK(validation_message([&] { drift_document_from_json(skewed); }).find("comparison") !=
              std::string::npos);
    }

    TEST_CASE("single-model drift documents carry no comparison") {
        DriftProfileDocument solo =
            build_drift_document("http://127.0.0.1:11434", 0.0, corpus(), {llama_profile()});
        const nlohmann::json doc = drift_document_to_json(solo, "T");
        CHECK(doc.at("comparison").is_null());
        const DriftProfileDocument back = drift_document_from_json(doc);
        CHECK(!back.comparison.has_value());
        nlohmann::json forged = doc;
        forged["comparison"] = {{"model_names", {"a"}}, {"rows", nlohmann::json::array()}};
        CHECK(validation_message([&] { drift_document_from_json(forged); })
                  .find("single-model") != std::string::npos);
    }

    TEST_CASE("the standalone decay figure matches the bundle's bytes") {
        testutil::TempDir dir;
        const auto figures = emit_robustness_figures(the_map(), {}, dir.file("figs"));
        const std::string alone = dir.file("decay.svg");
        emit_decay_figure(the_map().sweep, alone);
        CHECK(read_file(alone) == read_file(figures[0]));
        SweepResult stub;
        stub.rows.push_back(the_map().sweep.rows.front());
        CHECK_THROWS_AS(emit_decay_figure(stub, dir.file("stub.svg")), validation_error);
    }
}
