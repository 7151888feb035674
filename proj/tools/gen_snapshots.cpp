#include "kladapt/moore_greitzer.hpp"
#include <cstdio>
using namespace kladapt::moore_greitzer;
int main() {
    ExampleConfig cfg;
    auto f3 = figure_dataset(3, cfg);
    auto f4 = figure_dataset(4, cfg);
    auto f5 = figure_dataset(5, cfg);
    auto f6 = figure_dataset(6, cfg);
    auto settle = [](const Series& s, double eps) {
        double run = 0.0;
        std::vector<double> suffix(s.ys.size());
        for (std::size_t k = s.ys.size(); k-- > 0;) { run = std::max(run, s.ys[k]); suffix[k] = run; }
        for (std::size_t k = 0; k < s.ys.size(); ++k)
            if (suffix[k] <= eps) return s.xs[k];
        return -1.0;
    };
    std::printf("# Regression snapshot of the figure metrics, recorded from the first\n");
    std::printf("# verified generation. Regenerate with the gen_snapshots tool if the\n");
    std::printf("# integrator or the controllers intentionally change.\n");
    std::printf("fig3.settle05.a = %.12g\n", settle(f3.series[0], 0.05));
    std::printf("fig3.settle05.b = %.12g\n", settle(f3.series[1], 0.05));
    std::printf("fig4.peak.a = %.12g\n", *std::max_element(f4.series[0].ys.begin(), f4.series[0].ys.end()));
    std::printf("fig4.peak.b = %.12g\n", *std::max_element(f4.series[1].ys.begin(), f4.series[1].ys.end()));
    std::printf("fig5.final.a = %.12g\n", f5.series[0].ys.back());
    std::printf("fig5.final.b = %.12g\n", f5.series[1].ys.back());
    std::printf("fig6.final.a = %.12g\n", f6.series[0].ys.back());
    std::printf("fig6.final.b = %.12g\n", f6.series[1].ys.back());
    return 0;
}
