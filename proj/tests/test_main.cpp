// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "common/alloc.hpp"

int main(int argc, char** argv) {
  mtr::tune_allocator();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
