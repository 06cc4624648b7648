from typing import List

from nbt_planner.tokens import reserved_python_values


class Values:
    def p_value(self, p: List) -> None:
        """value : NUMBER
        | DQ_STRING
        | ID
        | list
        """
        p[0] = p[1]

    def p_value_reserved(self, p: List) -> None:
        """value : TRUE
        | FALSE
        | NONE
        """
        p[0] = reserved_python_values[p[1].upper()]

    def p_list(self, p: List) -> None:
        """list : LBRACKET values RBRACKET
        | LBRACKET values COMMA RBRACKET
        | LBRACKET RBRACKET
        """
        p_list = list(p)
        if len(p_list) == 3:
            p[0] = []
        else:
            p[0] = p_list[2]

    def p_values(self, p: List) -> None:
        """values : values COMMA value
        | value
        """
        p_list = list(p)
        if len(p_list) == 2:
            p[0] = [p_list[1]]
        else:
            p[0] = p_list[1]
            p[0].append(p_list[-1])
