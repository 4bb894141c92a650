#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "ppgkit/errors.hpp"
#include "ppgkit/signal.hpp"

using namespace ppg;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("/tmp/ppgkit_test_") + name;
}

}  // namespace

TEST_CASE("csv records round-trip through save and load, label included") {
    PpgRecord rec;
    rec.rate = 125.0;
    rec.label = 72.5;
    for (int i = 0; i < 10; ++i) rec.samples.push_back(0.1 * i - 0.37);

    const auto path = temp_path("roundtrip.csv");
    save_record_csv(rec, path);
    const PpgRecord back = load_record(path, RecordFormat::csv);
    CHECK(back.rate == 125.0);
    REQUIRE(back.label.has_value());
    CHECK(*back.label == 72.5);
    REQUIRE(back.samples.size() == rec.samples.size());
    for (size_t i = 0; i < rec.samples.size(); ++i) CHECK(back.samples[i] == rec.samples[i]);

    rec.label.reset();
    save_record_csv(rec, path);
    const PpgRecord plain = load_record(path, RecordFormat::csv);
    CHECK_FALSE(plain.label.has_value());
    std::remove(path.c_str());
}

TEST_CASE("csv loader accepts inline samples after the rate header") {
    const auto path = temp_path("inline.csv");
    std::ofstream(path) << "rate=50;0.5,1.5,-2.25\n";
    const PpgRecord rec = load_record(path, RecordFormat::csv);
    CHECK(rec.rate == 50.0);
    REQUIRE(rec.samples.size() == 3);
    CHECK(rec.samples[1] == 1.5);
    CHECK(rec.samples[2] == -2.25);
    std::remove(path.c_str());
}

TEST_CASE("raw doubles need an explicit rate") {
    const auto path = temp_path("raw.bin");
    std::vector<double> vals{1.0, -2.0, 3.5, 0.0, 9.25};
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(vals.data()),
               static_cast<std::streamsize>(vals.size() * sizeof(double)));

    const PpgRecord rec = load_record(path, RecordFormat::raw_f64, 100.0);
    CHECK(rec.rate == 100.0);
    REQUIRE(rec.samples.size() == 5);
    CHECK(rec.samples[4] == 9.25);
    CHECK_THROWS_AS(load_record(path, RecordFormat::raw_f64), DataError);
    CHECK_THROWS_AS(load_record(temp_path("missing.bin"), RecordFormat::raw_f64, 100.0),
                    DataError);
    std::remove(path.c_str());
}

TEST_CASE("resample maps sample times linearly") {
    PpgRecord rec;
    rec.rate = 10.0;
    rec.samples.resize(10);
    std::iota(rec.samples.begin(), rec.samples.end(), 0.0);

    const PpgRecord up = resample(rec, 20.0);
    CHECK(up.rate == 20.0);
    REQUIRE(up.samples.size() == 20);
    CHECK(up.samples[0] == 0.0);
    CHECK(up.samples[4] == doctest::Approx(2.0));
    CHECK(up.samples[19] == doctest::Approx(9.0));

    const PpgRecord same = resample(rec, 10.0);
    CHECK(same.samples == rec.samples);

    rec.label = 60.0;
    CHECK(resample(rec, 25.0).label == rec.label);
    CHECK_THROWS_AS(resample(rec, 0.0), DataError);
}

TEST_CASE("zscore normalizes to zero mean and unit population variance") {
    std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    const auto z = zscore(x);
    double mean = 0.0, var = 0.0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(z.size());
    for (double v : z) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.size());
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(zscore(std::vector<double>(4, 3.0)), DataError);
    CHECK_THROWS_AS(zscore({}), DataError);
}

TEST_CASE("derivative stacks replicate the leftmost valid value") {
    const std::vector<double> x{1.0, 3.0, 6.0, 10.0, 15.0};
    const DerivativeStack d = derivatives(x);
    CHECK(d.vpg == std::vector<double>{2.0, 2.0, 3.0, 4.0, 5.0});
    CHECK(d.apg == std::vector<double>{1.0, 1.0, 1.0, 1.0, 1.0});
    CHECK(d.jpg == std::vector<double>{0.0, 0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("window_slide yields the floor-count windows and drops short tails") {
    PpgRecord rec;
    rec.rate = 10.0;
    rec.samples.resize(35);
    std::iota(rec.samples.begin(), rec.samples.end(), 0.0);

    const auto wins = window_slide(rec, 1.0, 0.5);  // W=10, S=5
    REQUIRE(wins.size() == 6);  // floor((35-10)/5)+1
    for (const auto& w : wins) CHECK(w.size() == 10);
    CHECK(wins[0][0] == 0.0);
    CHECK(wins[1][0] == 5.0);
    CHECK(wins[5][9] == 34.0);

    rec.samples.resize(9);
    CHECK(window_slide(rec, 1.0, 0.5).empty());
}

TEST_CASE("past/anchor/future split takes floor(gamma*cols) off each end") {
    Mat w(3, 700);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 700; ++c) w.at(r, c) = r * 1000 + c;

    const PafPartition p = partition_paf(w, 0.4);
    CHECK(p.past.cols == 280);
    CHECK(p.anchor.cols == 140);
    CHECK(p.future.cols == 280);
    CHECK(p.past.rows == 3);
    CHECK(p.anchor.rows == 3);
    CHECK(p.future.rows == 3);
    CHECK(p.past.at(1, 0) == w.at(1, 0));
    CHECK(p.anchor.at(2, 0) == w.at(2, 280));
    CHECK(p.future.at(0, 279) == w.at(0, 699));
    CHECK(p.gamma == 0.4);

    CHECK_THROWS_AS(partition_paf(w, 0.5), DataError);
    CHECK_THROWS_AS(partition_paf(w, 0.0), DataError);
}

TEST_CASE("synthetic ppg is seed-deterministic with the requested geometry") {
    const PpgRecord a = synth_ppg(75.0, 0.05, 5.6, 125.0, 9);
    const PpgRecord b = synth_ppg(75.0, 0.05, 5.6, 125.0, 9);
    const PpgRecord c = synth_ppg(75.0, 0.05, 5.6, 125.0, 10);
    CHECK(a.samples.size() == 700);
    CHECK(a.rate == 125.0);
    CHECK(a.samples == b.samples);
    CHECK(a.samples != c.samples);

    // The fundamental should dominate: autocorrelation peak near rate*60/hr.
    double best = 0.0;
    int best_lag = 0;
    for (int lag = 60; lag <= 140; ++lag) {
        double s = 0.0;
        for (size_t i = lag; i < a.samples.size(); ++i) s += a.samples[i] * a.samples[i - lag];
        if (s > best) best = s, best_lag = lag;
    }
    CHECK(std::abs(best_lag - 100) <= 10);
}
