#pragma once

#include <gtest/gtest.h>

#include <cmath>

#include "modas/tensor.hpp"

namespace testutil {

inline void expect_tensor_near(const modas::Tensor& got, const modas::Tensor& want, double tol) {
    ASSERT_EQ(got.shape(), want.shape());
    for (long i = 0; i < got.size(); ++i) {
        EXPECT_NEAR(got[i], want[i], tol) << "at flat index " << i;
    }
}

// Relative error in the 2-norm: ||got - want|| <= atol + rtol * ||want||.
inline void expect_tensor_close(const modas::Tensor& got, const modas::Tensor& want, double rtol,
                                double atol = 0.0) {
    ASSERT_EQ(got.shape(), want.shape());
    double diff2 = 0.0, want2 = 0.0;
    for (long i = 0; i < got.size(); ++i) {
        diff2 += (got[i] - want[i]) * (got[i] - want[i]);
        want2 += want[i] * want[i];
    }
    EXPECT_LE(std::sqrt(diff2), atol + rtol * std::sqrt(want2))
        << "||got-want|| = " << std::sqrt(diff2) << ", ||want|| = " << std::sqrt(want2);
}

inline bool bitwise_equal(const modas::Tensor& a, const modas::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (long i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;  // exact double comparison is intentional
    }
    return true;
}

}  // namespace testutil
