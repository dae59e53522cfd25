# Failed test: AcceptanceTests.test_exhaustive_switch_schedules
# Error: Virtual clock would move backwards (750.0 < 770.0)

    def test_exhaustive_switch_schedules(self):
        result = explore_switch(depth=3 if self.runner.quick else 4, width=3)
        self.assert_greater(result.explored, 10)
        self.assert_equals(result.violations, [])
        self.assert_equals(result.incomplete, [])
