#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "semf/data.hpp"
#include "semf/rng.hpp"

using namespace semf;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    os << content;
}

bool cells_equal(double a, double b) { return (is_gap(a) && is_gap(b)) || a == b; }

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Contract;
}

}  // namespace

TEST_CASE("load_csv reads an 11-column file as target plus 10 exogenous") {
    const std::string path = temp_path("semf_load11.csv");
    std::string csv = "date,target,a,b,c,d,e,f,g,h,i,j\n";
    csv += "2020-01-02,10,1,2,3,4,5,6,7,8,9,10\n";
    csv += "2020-01-03,11,1,2,3,4,5,6,7,8,9,10\n";
    csv += "2020-01-04,12,1,2,3,4,5,6,7,8,9,10\n";
    write_file(path, csv);
    const AlignedFrame f = load_csv(path);
    REQUIRE(f.n_exo() == 10);
    REQUIRE(f.rows() == 3);
    REQUIRE(f.target == std::vector<double>{10, 11, 12});
    fs::remove(path);
}

TEST_CASE("empty file is a parse error") {
    const std::string path = temp_path("semf_empty.csv");
    write_file(path, "");
    REQUIRE(kind_of([&] { load_csv(path); }) == ErrorKind::Parse);
    fs::remove(path);
}

TEST_CASE("rows out of date order are sorted ascending") {
    const std::string path = temp_path("semf_unsorted.csv");
    write_file(path,
               "date,target,x\n"
               "2021-03-05,3,30\n"
               "2021-03-01,1,10\n"
               "2021-03-03,2,20\n");
    const AlignedFrame f = load_csv(path);

    // independent sort oracle over (date, row) pairs
    std::vector<std::pair<std::string, double>> rows{{"2021-03-05", 3}, {"2021-03-01", 1}, {"2021-03-03", 2}};
    std::sort(rows.begin(), rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(f.dates[i].iso() == rows[i].first);
        REQUIRE(f.target[i] == rows[i].second);
        REQUIRE(f.exo_at(i, 0) == rows[i].second * 10);
    }
    fs::remove(path);
}

TEST_CASE("duplicate dates are a schema error") {
    const std::string path = temp_path("semf_dup.csv");
    write_file(path,
               "date,target,x\n"
               "2021-03-01,1,10\n"
               "2021-03-01,2,20\n");
    REQUIRE(kind_of([&] { load_csv(path); }) == ErrorKind::Schema);
    fs::remove(path);
}

TEST_CASE("malformed rows report the line number") {
    const std::string path = temp_path("semf_badrow.csv");
    write_file(path,
               "date,target,x\n"
               "2021-03-01,1,10\n"
               "2021-03-02,oops,20\n");
    try {
        load_csv(path);
        FAIL("expected parse error");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::Parse);
        REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("line 3"));
    }
    fs::remove(path);
}

TEST_CASE("a header without exogenous columns is a schema error") {
    const std::string path = temp_path("semf_2col.csv");
    write_file(path, "date,target\n2021-03-01,1\n");
    REQUIRE(kind_of([&] { load_csv(path); }) == ErrorKind::Schema);
    fs::remove(path);
}

TEST_CASE("imputation forward-fills interior gaps and back-fills leading ones") {
    AlignedFrame f;
    f.dates = {Date{1}, Date{2}, Date{3}};
    f.column_names = {"x"};
    f.target = {1.0, kGap, 3.0};
    f.exogenous = {kGap, kGap, 5.0};
    const AlignedFrame g = impute(f);
    REQUIRE(g.target == std::vector<double>{1.0, 1.0, 3.0});
    REQUIRE(g.exogenous == std::vector<double>{5.0, 5.0, 5.0});
    REQUIRE_FALSE(g.has_gaps());
}

TEST_CASE("imputation matches a naive per-cell scan oracle on random gaps") {
    Rng rng(41);
    const std::size_t n = 400;
    std::vector<double> clean(n);
    for (auto& v : clean) v = rng.normal();
    std::vector<double> gapped = clean;
    for (auto& v : gapped)
        if (rng.uniform() < 0.05) v = kGap;
    gapped[0] = kGap;  // force a leading gap

    AlignedFrame f;
    for (std::size_t i = 0; i < n; ++i) f.dates.push_back(Date{static_cast<std::int64_t>(i)});
    f.column_names = {"x"};
    f.target = gapped;
    f.exogenous = gapped;
    const AlignedFrame g = impute(f);

    // oracle: for each cell, scan left for the previous observed value, else
    // scan right for the first observed one
    for (std::size_t i = 0; i < n; ++i) {
        double expect = kGap;
        for (std::size_t b = i + 1; b-- > 0;)
            if (!is_gap(gapped[b])) {
                expect = gapped[b];
                break;
            }
        if (is_gap(expect))
            for (std::size_t a = i; a < n; ++a)
                if (!is_gap(gapped[a])) {
                    expect = gapped[a];
                    break;
                }
        REQUIRE(g.target[i] == expect);
        REQUIRE(g.exogenous[i] == expect);
    }
}

TEST_CASE("imputation is idempotent") {
    SynthConfig cfg;
    cfg.n_days = 400;
    const AlignedFrame once = impute(synthesize_dataset(cfg));
    const AlignedFrame twice = impute(once);
    REQUIRE(once.target == twice.target);
    REQUIRE(once.exogenous == twice.exogenous);
}

TEST_CASE("an all-gap column is an imputation error naming the column") {
    AlignedFrame f;
    f.dates = {Date{1}, Date{2}};
    f.column_names = {"vix"};
    f.target = {1.0, 2.0};
    f.exogenous = {kGap, kGap};
    try {
        impute(f);
        FAIL("expected imputation error");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::Imputation);
        REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("vix"));
    }
}

TEST_CASE("window count follows T - L - maxH + 1") {
    SynthConfig cfg;
    cfg.n_days = 3339;
    cfg.gap_fraction = 0.0;
    const AlignedFrame f = synthesize_dataset(cfg);
    REQUIRE(make_windows(f, 120).size() == 3185);

    AlignedFrame tiny = f;
    tiny.dates.resize(155);
    tiny.target.resize(155);
    tiny.exogenous.resize(155 * f.n_exo());
    REQUIRE(make_windows(tiny, 120).size() == 1);
}

TEST_CASE("window count formula holds across random sizes") {
    Rng rng(42);
    SynthConfig cfg;
    cfg.n_days = 900;
    cfg.gap_fraction = 0.0;
    const AlignedFrame base = synthesize_dataset(cfg);
    for (int round = 0; round < 20; ++round) {
        const std::size_t L = 10 + rng.index(200);
        const std::size_t T = L + 35 + rng.index(700);
        AlignedFrame f = base;
        f.dates.resize(T);
        f.target.resize(T);
        f.exogenous.resize(T * base.n_exo());
        REQUIRE(make_windows(f, L).size() == T - L - 35 + 1);
    }
}

TEST_CASE("too-short series report the minimum length") {
    SynthConfig cfg;
    cfg.n_days = 160;
    cfg.gap_fraction = 0.0;
    AlignedFrame f = synthesize_dataset(cfg);
    f.dates.resize(100);
    f.target.resize(100);
    f.exogenous.resize(100 * f.n_exo());
    try {
        make_windows(f, 120);
        FAIL("expected sizing error");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::Sizing);
        REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("155"));
    }
}

TEST_CASE("no window reads past its anchor") {
    SynthConfig cfg;
    cfg.n_days = 300;
    cfg.gap_fraction = 0.0;
    const AlignedFrame f = synthesize_dataset(cfg);
    const auto windows = make_windows(f, 60);
    for (const auto& w : windows) {
        const std::size_t L = w.history.size();
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t t = w.anchor_index + 1 - L + i;
            REQUIRE(t <= w.anchor_index);
            REQUIRE(w.history[i] == f.target[t]);
            for (std::size_t j = 0; j < f.n_exo(); ++j) REQUIRE(w.exo_window[i * f.n_exo() + j] == f.exo_at(t, j));
        }
        for (std::size_t k = 0; k < 6; ++k)
            REQUIRE(w.raw_targets[k] == f.target[w.anchor_index + static_cast<std::size_t>(kHorizons[k])]);
    }
}

TEST_CASE("chronological split reproduces the documented counts") {
    auto windows_of = [](std::size_t n) {
        std::vector<WindowSample> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i].anchor_index = i;
        return w;
    };
    {
        const Splits s = chronological_split(windows_of(3185));
        REQUIRE(s.n_train == 2070);
        REQUIRE(s.n_val == 478);
        REQUIRE(s.n_test == 637);
    }
    {
        const Splits s = chronological_split(windows_of(20));
        REQUIRE(s.n_train == 13);
        REQUIRE(s.n_val == 3);
        REQUIRE(s.n_test == 4);
    }
    {
        const Splits s = chronological_split(windows_of(3));
        REQUIRE(s.n_train == 1);
        REQUIRE(s.n_val == 1);
        REQUIRE(s.n_test == 1);
    }
    REQUIRE(kind_of([&] { chronological_split(windows_of(2)); }) == ErrorKind::Sizing);
}

TEST_CASE("splits preserve temporal order and partition all windows") {
    Rng rng(43);
    for (int round = 0; round < 10; ++round) {
        const std::size_t n = 3 + rng.index(500);
        std::vector<WindowSample> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i].anchor_index = i + 100;
        const Splits s = chronological_split(std::move(w));
        REQUIRE(s.n_train + s.n_val + s.n_test == n);
        REQUIRE(s.n_train >= 1);
        REQUIRE(s.n_val >= 1);
        REQUIRE(s.n_test >= 1);
        const auto train = s.train(), val = s.val(), test = s.test();
        REQUIRE(train[train.size() - 1].anchor_index < val[0].anchor_index);
        REQUIRE(val[val.size() - 1].anchor_index < test[0].anchor_index);
    }
}

TEST_CASE("sample views count accesses per split") {
    std::vector<WindowSample> w(10);
    for (std::size_t i = 0; i < 10; ++i) w[i].anchor_index = i;
    const Splits s = chronological_split(std::move(w));
    (void)s.train()[0];
    (void)s.train()[1];
    (void)s.test()[0];
    REQUIRE(s.train_hits->load() == 2);
    REQUIRE(s.val_hits->load() == 0);
    REQUIRE(s.test_hits->load() == 1);
}

TEST_CASE("standardizer clamps constant horizons to the variance floor") {
    std::vector<WindowSample> w(5);
    for (auto& s : w) s.raw_targets.fill(5.0);
    Splits splits = chronological_split(std::move(w));
    const Standardizer st = fit_standardizer(splits.train());
    for (std::size_t k = 0; k < 6; ++k) {
        REQUIRE(st.mean[k] == 5.0);
        REQUIRE(st.stdev[k] == kVarianceFloor);
    }
    apply_standardizer(splits.mutable_train(), st);
    for (std::size_t i = 0; i < splits.n_train; ++i)
        for (double t : splits.train()[i].targets) REQUIRE(t == 0.0);
}

TEST_CASE("standardized training targets have zero mean and unit std per horizon") {
    Rng rng(44);
    std::vector<WindowSample> w(257);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i].anchor_index = i;
        for (std::size_t k = 0; k < 6; ++k) w[i].raw_targets[k] = 50.0 + 7.0 * rng.normal() + double(k);
    }
    Splits splits = chronological_split(std::move(w));
    const Standardizer st = fit_standardizer(splits.train());
    apply_standardizer(splits.mutable_train(), st);
    const auto train = splits.train();
    for (std::size_t k = 0; k < 6; ++k) {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) mu += train[i].targets[k];
        mu /= static_cast<double>(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            const double d = train[i].targets[k] - mu;
            var += d * d;
        }
        var /= static_cast<double>(train.size());
        REQUIRE_THAT(mu, Catch::Matchers::WithinAbs(0.0, 1e-9));
        REQUIRE_THAT(std::sqrt(var), Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("standardize then invert round-trips raw values") {
    Rng rng(45);
    Standardizer st;
    for (std::size_t k = 0; k < 6; ++k) {
        st.mean[k] = rng.normal(100.0, 10.0);
        st.stdev[k] = 0.5 + rng.uniform();
    }
    for (int i = 0; i < 200; ++i) {
        const std::size_t k = rng.index(6);
        const double v = rng.normal(100.0, 20.0);
        REQUIRE_THAT(st.destandardize(k, st.standardize(k, v)), Catch::Matchers::WithinAbs(v, 1e-9));
    }
}

TEST_CASE("standardizer statistics stay bit-stable across applications") {
    SynthConfig cfg;
    cfg.n_days = 400;
    Splits splits = chronological_split(make_windows(impute(synthesize_dataset(cfg)), 120));
    const Standardizer st = fit_standardizer(splits.train());
    auto checksum = [](const Standardizer& s) {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&](double v) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            h = (h ^ bits) * 1099511628211ull;
        };
        for (double v : s.mean) mix(v);
        for (double v : s.stdev) mix(v);
        return h;
    };
    const auto before = checksum(st);
    apply_standardizer(splits.mutable_train(), st);
    apply_standardizer(splits.mutable_val(), st);
    apply_standardizer(splits.mutable_train(), st);  // re-applying is harmless
    REQUIRE(checksum(st) == before);
    const Standardizer refit = fit_standardizer(splits.train());
    REQUIRE(checksum(refit) == before);  // raw targets untouched by apply
}

TEST_CASE("synthesis is bit-deterministic per seed") {
    const AlignedFrame a = synthesize_dataset(7, 3339);
    const AlignedFrame b = synthesize_dataset(7, 3339);
    REQUIRE(a.rows() == 3339);
    REQUIRE(std::equal(a.target.begin(), a.target.end(), b.target.begin(), cells_equal));
    REQUIRE(std::equal(a.exogenous.begin(), a.exogenous.end(), b.exogenous.begin(), cells_equal));
    const AlignedFrame c = synthesize_dataset(8, 3339);
    REQUIRE_FALSE(std::equal(a.target.begin(), a.target.end(), c.target.begin(), cells_equal));
}

TEST_CASE("noise-free gap-free synthesis matches the analytic generator formula") {
    SynthConfig cfg;
    cfg.n_days = 500;
    cfg.noise_scale = 0.0;
    cfg.gap_fraction = 0.0;
    SynthInfo info;
    const AlignedFrame f = synthesize_dataset(cfg, &info);
    const SynthParams& p = cfg.params;
    const auto& cols = synth_columns();
    for (std::size_t t = 0; t < f.rows(); ++t) {
        double expect = p.base_level + p.trend_per_day * static_cast<double>(t);
        expect += p.sin_amp1 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.sin_period1 + info.phase1);
        expect += p.sin_amp2 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.sin_period2 + info.phase2);
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t col = p.driver_columns[i];
            double ma = 0.0;
            for (int k = -p.driver_ma_halfwidths[i]; k <= p.driver_ma_halfwidths[i]; ++k) {
                long src = static_cast<long>(t) - p.driver_lags[i] + k;
                if (src < 0) src = 0;
                if (src >= static_cast<long>(f.rows())) src = static_cast<long>(f.rows()) - 1;
                ma += f.exo_at(static_cast<std::size_t>(src), col) - cols[col].mean;
            }
            expect += p.driver_weights[i] * (ma / (2.0 * p.driver_ma_halfwidths[i] + 1.0));
        }
        REQUIRE(f.target[t] == expect);
    }
}

TEST_CASE("synthesis blanks roughly the configured gap fraction") {
    const AlignedFrame f = synthesize_dataset(11, 3000);
    std::size_t gaps = 0, cells = 0;
    for (double v : f.target) {
        ++cells;
        gaps += is_gap(v) ? 1 : 0;
    }
    for (double v : f.exogenous) {
        ++cells;
        gaps += is_gap(v) ? 1 : 0;
    }
    const double frac = static_cast<double>(gaps) / static_cast<double>(cells);
    REQUIRE(frac > 0.015);
    REQUIRE(frac < 0.025);
}

TEST_CASE("synthesis rejects day counts below the minimum") {
    REQUIRE(kind_of([] { synthesize_dataset(1, 100); }) == ErrorKind::Sizing);
}

TEST_CASE("synthetic CSV round-trips through write and load") {
    const std::string path = temp_path("semf_roundtrip.csv");
    const AlignedFrame a = synthesize_dataset(9, 300);
    write_csv(path, a);
    const AlignedFrame b = load_csv(path);
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.column_names == b.column_names);
    for (std::size_t t = 0; t < a.rows(); ++t) {
        REQUIRE(a.dates[t].serial == b.dates[t].serial);
        REQUIRE(cells_equal(a.target[t], b.target[t]));
        for (std::size_t j = 0; j < a.n_exo(); ++j) REQUIRE(cells_equal(a.exo_at(t, j), b.exo_at(t, j)));
    }
    fs::remove(path);
}
