#include <catch2/catch_amalgamated.hpp>

#include "finch/ops.hpp"
#include "finch/value.hpp"

using namespace finch;

TEST_CASE("value construction and access") {
  CHECK(Value::of_int(3).as_int() == 3);
  CHECK(Value::of_float(2.5).as_float() == 2.5);
  CHECK(Value::of_bool(true).as_bool());
  CHECK(Value::missing().is_missing());
  CHECK(Value::of_bool(true).as_int() == 1);
}

TEST_CASE("bitwise equality distinguishes NaN payloads but equates values") {
  Value a = Value::of_float(1.5), b = Value::of_float(1.5);
  CHECK(bits_equal(a, b));
  CHECK_FALSE(bits_equal(Value::of_float(0.0), Value::of_float(-0.0)));
  CHECK(values_equal(Value::of_int(2), Value::of_float(2.0)));
  CHECK_FALSE(values_equal(Value::of_bool(true), Value::of_int(1)));
}

TEST_CASE("operator evaluation") {
  auto ap = [](const char* op, Value a, Value b) { return apply_op(Op(op), {a, b}); };
  CHECK(ap("+", Value::of_int(2), Value::of_int(3)).as_int() == 5);
  CHECK(ap("+", Value::of_int(2), Value::of_float(0.5)).as_float() == 2.5);
  CHECK(ap("*", Value::of_float(2.0), Value::of_int(4)).as_float() == 8.0);
  CHECK(ap("min", Value::of_int(2), value_inf()).as_float() == 2.0);
  CHECK(ap("max", Value::of_int(2), Value::of_int(7)).as_int() == 7);
  CHECK(ap("div", Value::of_int(37), Value::of_int(16)).as_int() == 2);
  CHECK(ap("div", Value::of_int(-1), Value::of_int(16)).as_int() == -1);
  CHECK(ap("|", Value::of_bool(false), Value::of_bool(true)).as_bool());
  CHECK_FALSE(ap("&", Value::of_bool(true), Value::of_bool(false)).as_bool());
  CHECK(ap("<", Value::of_int(1), Value::of_int(2)).as_bool());
  CHECK(apply_op(Op("!"), {Value::of_bool(false)}).as_bool());
}

TEST_CASE("choose returns any argument that is not the parameter") {
  Op choose0("choose", Value::of_int(0));
  CHECK(apply_op(choose0, {Value::of_int(0), Value::of_int(7)}).as_int() == 7);
  CHECK(apply_op(choose0, {Value::of_int(4), Value::of_int(7)}).as_int() == 4);
  CHECK(op_identity(choose0).has_value());
  CHECK(op_absorbs(choose0, Value::of_int(4)));
  CHECK_FALSE(op_absorbs(choose0, Value::of_int(0)));
}

TEST_CASE("coalesce is the only operator accepting missing") {
  CHECK(apply_op(Op("coalesce"), {Value::missing(), Value::of_int(7)}).as_int() == 7);
  CHECK(apply_op(Op("coalesce"), {Value::of_bool(false), Value::of_bool(true)}).as_bool() ==
        false);
  CHECK_THROWS_AS(apply_op(Op("+"), {Value::missing(), Value::of_int(1)}), Error);
}

TEST_CASE("algebra facts") {
  CHECK(op_info(Op("*")).annihilator.has_value());
  CHECK(op_absorbs(Op("*"), Value::of_int(0)));
  CHECK(op_absorbs(Op("+"), value_inf()));
  CHECK(op_identity(Op("min"))->as_float() > 1e300);
  CHECK(op_info(Op("min")).idempotent);
}
