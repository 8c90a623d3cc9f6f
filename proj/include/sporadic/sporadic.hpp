#pragma once

#include "sporadic/core.hpp"
#include "sporadic/problem.hpp"
#include "sporadic/spectral.hpp"
#include "sporadic/intersect.hpp"
#include "sporadic/oracle.hpp"
#include "sporadic/eval.hpp"
#include "sporadic/io.hpp"
#include "sporadic/experiment.hpp"
