#include "hlq/tensor.hpp"

#include <cmath>
#include <string>

namespace hlq {

void require_finite(const Matrix& m, const char* what) {
    for (size_t i = 0; i < m.data.size(); ++i) {
        if (!std::isfinite(m.data[i])) {
            throw Error(ErrorKind::data,
                        std::string(what) + ": non-finite value at flat index " +
                            std::to_string(i));
        }
    }
}

void require_shape(const Matrix& m, int64_t rows, int64_t cols, const char* what) {
    if (m.rows != rows || m.cols != cols) {
        throw Error(ErrorKind::data,
                    std::string(what) + ": expected shape [" + std::to_string(rows) + ", " +
                        std::to_string(cols) + "], got [" + std::to_string(m.rows) + ", " +
                        std::to_string(m.cols) + "]");
    }
}

}  // namespace hlq
