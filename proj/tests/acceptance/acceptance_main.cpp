// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <exception>
#include <set>

#include "CLI11.hpp"

#include "criteria.hpp"

#include "trime/log.hpp"

int main(int argc, char** argv) {
    CLI::App app{"trime acceptance checks"};
    std::vector<int> only;
    std::string work_dir = TRIME_TEST_TMP;
    app.add_option("--only", only, "Criterion numbers to run (default: all)");
    app.add_option("--work", work_dir, "Scratch directory");
    CLI11_PARSE(app, argc, argv);

    trime::set_log_level(trime::LogLevel::quiet);
    const std::set<int> selected(only.begin(), only.end());
    auto criteria = acceptance::property_criteria();
    for (auto& c : acceptance::experiment_criteria()) criteria.push_back(std::move(c));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto work = std::filesystem::path(work_dir) / ("criterion" + std::to_string(c.id));
        std::filesystem::remove_all(work);
        std::filesystem::create_directories(work);
        const auto t0 = std::chrono::steady_clock::now();
        acceptance::Outcome out;
        try {
            out = c.run(work);
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %s: %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", c.id, c.title.c_str(),
                    out.detail.c_str(), secs);
        std::fflush(stdout);
        failed += out.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
