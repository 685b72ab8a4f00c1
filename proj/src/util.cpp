#include "modepeel/util.hpp"

#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace modepeel::util {

void parallel_for(int n, int threads,
                  const std::function<void(int, int)>& chunk_fn) {
    if (n <= 0) return;
    const int t = std::max(1, std::min(threads, n));
    if (t == 1) {
        chunk_fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    const int base = n / t, rem = n % t;
    int begin = 0;
    for (int k = 0; k < t; ++k) {
        const int len = base + (k < rem ? 1 : 0);
        const int b = begin, e = begin + len;
        begin = e;
        pool.emplace_back([&, b, e] {
            try {
                chunk_fn(b, e);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<int> min_cost_assignment(const RMat& cost) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) throw Error("min_cost_assignment: matrix not square");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> res(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) res[p[j] - 1] = j - 1;
    return res;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace modepeel::util
