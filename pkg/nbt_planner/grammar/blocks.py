from typing import List

from nbt_planner.parser import ASSIGN, BLOCK


class Blocks:
    def p_config(self, p: List) -> None:
        """config : items
        | empty
        """
        p[0] = self.collect_items(p[1] or [])

    def p_empty(self, p: List) -> None:
        """empty :"""
        p[0] = None

    def p_items(self, p: List) -> None:
        """items : items item
        | item
        """
        p_list = list(p)
        if len(p_list) == 2:
            p[0] = [p_list[1]]
        else:
            p[0] = p_list[1]
            p[0].append(p_list[-1])

    def p_item_assign(self, p: List) -> None:
        """item : ID EQ value"""
        p[0] = (ASSIGN, p[1], p[3])

    def p_item_block(self, p: List) -> None:
        """item : ID LBRACE items RBRACE
        | ID LBRACE RBRACE
        """
        p_list = list(p)
        items = p_list[3] if len(p_list) == 5 else []
        p[0] = (BLOCK, p[1], self.collect_items(items))
