#pragma once

#include "generators.hpp"

#include <gtest/gtest.h>
